//! 64-bit range coder with carry propagation over frequency tables whose
//! counts sum to `2^PROB_BITS`.
//!
//! The range is renormalized to at least `2^48` after every symbol, so the
//! truncation in `range >> PROB_BITS` costs under `2^-33` bits per symbol.
//! The flush writes the fewest bytes that pin a value inside the final
//! interval; missing bytes read as zero on the decoding side.

use super::table::{FrequencyTable, PROB_BITS};
use super::CodecError;

const BOT: u64 = 1 << 48;

pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
        }
    }

    fn carry(&mut self) {
        for b in self.out.iter_mut().rev() {
            *b = b.wrapping_add(1);
            if *b != 0 {
                return;
            }
        }
    }

    pub fn encode(&mut self, cum: u32, freq: u32) {
        let r = self.range >> PROB_BITS;
        let (low, overflow) = self.low.overflowing_add(r * cum as u64);
        self.low = low;
        if overflow {
            self.carry();
        }
        self.range = r * freq as u64;
        while self.range < BOT {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let end = self.low as u128 + self.range as u128;
        for n in 0..=8u32 {
            // Round low up to a multiple of 2^(64 - 8n) and keep it if it
            // still lies below the interval's end.
            let unit = 1u128 << (64 - 8 * n);
            let v = (self.low as u128).div_ceil(unit) * unit;
            if v < end {
                if v >> 64 != 0 {
                    self.carry();
                }
                let v = v as u64;
                for k in 0..n {
                    self.out.push((v >> (56 - 8 * k)) as u8);
                }
                break;
            }
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    range: u64,
    /// Offset of the coded value from the current interval's low end.
    code: u64,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = RangeDecoder {
            range: u64::MAX,
            code: 0,
            input,
            pos: 0,
        };
        for _ in 0..8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    /// Bytes past the end read as zero so that corrupt or short streams
    /// still decode to in-range symbols.
    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub fn decode(&mut self, table: &FrequencyTable) -> usize {
        let r = self.range >> PROB_BITS;
        let total = 1u64 << PROB_BITS;
        let target = (self.code / r).min(total - 1) as u32;
        let symbol = table.symbol_for(target);
        let (cum, freq) = table.interval(symbol);
        // Corrupt input can leave `code` past the interval; saturating keeps
        // the state well defined without affecting valid streams.
        self.code = self.code.saturating_sub(r * cum as u64);
        self.range = r * freq as u64;
        self.code = self.code.min(self.range - 1);
        while self.range < BOT {
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.range <<= 8;
        }
        symbol
    }
}

/// Encodes `symbols` under `table`. Empty input and single-entry tables
/// produce an empty stream.
pub fn arithmetic_code(symbols: &[usize], table: &FrequencyTable) -> Result<Vec<u8>, CodecError> {
    for &s in symbols {
        if s >= table.len() {
            return Err(CodecError::SymbolOutOfRange {
                symbol: s,
                size: table.len(),
            });
        }
    }
    if symbols.is_empty() || table.len() == 1 {
        return Ok(Vec::new());
    }
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        let (cum, freq) = table.interval(s);
        enc.encode(cum, freq);
    }
    Ok(enc.finish())
}

/// Decodes `count` symbols. Every returned symbol is `< table.len()`.
pub fn arithmetic_decode(bytes: &[u8], table: &FrequencyTable, count: usize) -> Vec<usize> {
    if count == 0 || table.len() <= 1 {
        return vec![0; count];
    }
    let mut dec = RangeDecoder::new(bytes);
    (0..count).map(|_| dec.decode(table)).collect()
}
