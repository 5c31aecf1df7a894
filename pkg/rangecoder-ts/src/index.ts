export {
  CdfTable,
  DecodeError,
  EncodeError,
  FormatError,
  RangeDecoder,
  RangeEncoder,
  TOTAL,
  decode,
  encode,
  validateTable,
} from './rangecoder.js';
export { Corpus, CorpusCase, readCorpus } from './corpus.js';
