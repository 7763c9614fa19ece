//! Bit-stream primitives and CRC32 shared by the checkpoint and packed
//! sparse formats.

/// MSB-first bit accumulator.
#[derive(Default)]
pub struct BitWriter {
    buf: Vec<u8>,
    cur: u8,
    filled: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append the low `n` bits of `v`, most significant first. n ≤ 64.
    pub fn write_bits(&mut self, v: u64, n: u32) {
        assert!(n <= 64);
        for i in (0..n).rev() {
            let bit = ((v >> i) & 1) as u8;
            self.cur = (self.cur << 1) | bit;
            self.filled += 1;
            if self.filled == 8 {
                self.buf.push(self.cur);
                self.cur = 0;
                self.filled = 0;
            }
        }
    }

    /// Number of bits written so far.
    pub fn bit_len(&self) -> usize {
        self.buf.len() * 8 + self.filled as usize
    }

    /// Zero-pad to a byte boundary and return the buffer.
    pub fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.cur <<= 8 - self.filled;
            self.buf.push(self.cur);
        }
        self.buf
    }
}

/// MSB-first bit cursor over a byte slice.
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize, // bit position
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader { data, pos: 0 }
    }

    pub fn bit_pos(&self) -> usize {
        self.pos
    }

    /// Read `n` bits MSB-first; errors past the end.
    pub fn read_bits(&mut self, n: u32) -> Result<u64, String> {
        assert!(n <= 64);
        if self.pos + n as usize > self.data.len() * 8 {
            return Err("bit stream truncated".into());
        }
        let mut v = 0u64;
        for _ in 0..n {
            let byte = self.data[self.pos / 8];
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u64;
            self.pos += 1;
        }
        Ok(v)
    }
}

fn crc_table() -> &'static [u32; 256] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0u32; 256];
        for (i, slot) in t.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *slot = c;
        }
        t
    })
}

/// Streaming CRC32 (IEEE 802.3).
#[derive(Clone, Copy)]
pub struct Crc32 {
    state: u32,
}

impl Default for Crc32 {
    fn default() -> Self {
        Self::new()
    }
}

impl Crc32 {
    pub fn new() -> Self {
        Crc32 { state: 0xFFFF_FFFF }
    }

    pub fn update(&mut self, data: &[u8]) {
        let t = crc_table();
        for &b in data {
            self.state = t[((self.state ^ b as u32) & 0xFF) as usize] ^ (self.state >> 8);
        }
    }

    pub fn finalize(self) -> u32 {
        self.state ^ 0xFFFF_FFFF
    }
}

pub fn crc32(data: &[u8]) -> u32 {
    let mut c = Crc32::new();
    c.update(data);
    c.finalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc32_reference_vectors() {
        // canonical IEEE test vector
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0x0000_0000);
        assert_eq!(crc32(b"a"), 0xE8B7_BE43);
        // streaming equals one-shot
        let mut c = Crc32::new();
        c.update(b"1234");
        c.update(b"56789");
        assert_eq!(c.finalize(), 0xCBF4_3926);
    }

    #[test]
    fn bit_roundtrip_msb_first() {
        let mut w = BitWriter::new();
        w.write_bits(0b101, 3);
        w.write_bits(0xFFFF, 16);
        w.write_bits(0, 5);
        w.write_bits(0b11, 2);
        assert_eq!(w.bit_len(), 26);
        let bytes = w.finish();
        assert_eq!(bytes.len(), 4); // 26 bits → 4 bytes
        let mut r = BitReader::new(&bytes);
        assert_eq!(r.read_bits(3).unwrap(), 0b101);
        assert_eq!(r.read_bits(16).unwrap(), 0xFFFF);
        assert_eq!(r.read_bits(5).unwrap(), 0);
        assert_eq!(r.read_bits(2).unwrap(), 0b11);
        // padding bits are zero
        assert_eq!(r.read_bits(6).unwrap(), 0);
        assert!(r.read_bits(1).is_err(), "past the end must error");
    }

    #[test]
    fn first_byte_layout_is_msb_first() {
        let mut w = BitWriter::new();
        w.write_bits(1, 1); // single 1 bit lands in the MSB
        let bytes = w.finish();
        assert_eq!(bytes, vec![0b1000_0000]);
    }
}
