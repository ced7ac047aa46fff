//! Compressed bitstream: removal of pruned Gaussians, grouping by SH mask
//! pattern, entropy coding of codebook indexes and opacities, half-precision
//! positions.
//!
//! Wire layout (all little-endian):
//!
//! ```text
//! "GRDO" version:u8
//! count:u32 cluster_starts:[u32; 8] alpha_min:f32 alpha_step:f32 sizes:[u32; 6]
//! per tag (scale, rotation, dc, sh1, sh2, sh3):
//!     codebook:[f32; size * dim] counts:[u16; size] len:u32 stream:[u8; len]
//! opacity counts:[u16; 256] len:u32 stream:[u8; len]
//! positions:[f16; count * 3]
//! ```

mod error;
mod format;
mod rangecoder;
mod rearrange;
mod table;

pub use error::CodecError;
pub use format::{decode, encode, Composition, DecodedScene, EncodeOptions, Encoded, IndexBytes, FORMAT_VERSION, HEADER_BYTES, MAGIC};
pub use rangecoder::{arithmetic_code, arithmetic_decode, RangeDecoder, RangeEncoder};
pub use rearrange::{cluster_bits, cluster_of, cluster_ranges, rearrange, remove_pruned, Rearranged, Survivors, CLUSTERS};
pub use table::{FrequencyTable, PROB_BITS, PROB_TOTAL};
