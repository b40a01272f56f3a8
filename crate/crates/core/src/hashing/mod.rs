//! Iterative quantization: PCA followed by a learned rotation that makes the
//! sign of every coordinate a good binary code.

mod code;
mod itq;

pub use code::{
    decode_codes, encode_codes, hamming_distance, read_codes, write_codes, BinaryCode, CODES_MAGIC,
};
pub use itq::{
    decode_codec, encode_codec, itq_fit, load_codec, save_codec, ItqCodec, ItqFit, CODEC_MAGIC,
    DEFAULT_ITERATIONS,
};
