/// Embedding id reserved for padding; all 256 byte values are real ids.
pub const PAD_ID: u16 = 256;

/// Byte values plus the padding id.
pub const BYTE_VOCAB: usize = 257;

/// Raw UTF-8 bytes of `text` as ids, truncated to `max_len` and right-padded
/// with [`PAD_ID`].
pub fn encode_bytes(text: &str, max_len: usize) -> Vec<u16> {
    encode_raw(text.as_bytes(), max_len)
}

pub fn encode_raw(bytes: &[u8], max_len: usize) -> Vec<u16> {
    let mut ids: Vec<u16> = bytes.iter().take(max_len).map(|&b| u16::from(b)).collect();
    ids.resize(max_len, PAD_ID);
    ids
}

/// Inverse of [`encode_raw`] with padding stripped.
pub fn decode_ids(ids: &[u16]) -> Vec<u8> {
    ids.iter()
        .filter(|&&id| id != PAD_ID)
        .map(|&id| id as u8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PAD: u16 = PAD_ID;

    #[test]
    fn nordic_letters() {
        assert_eq!(encode_bytes("ö", 4), vec![0xC3, 0xB6, PAD, PAD]);
        assert_eq!(encode_bytes("ä", 2), vec![0xC3, 0xA4]);
        assert_eq!(&encode_bytes("æ", 3)[..2], &[0xC3, 0xA6]);
        assert_eq!(&encode_bytes("ø", 2)[..2], &[0xC3, 0xB8]);
    }

    #[test]
    fn empty_and_truncated() {
        assert_eq!(encode_bytes("", 3), vec![PAD; 3]);
        let long = "a".repeat(500);
        let ids = encode_bytes(&long, 384);
        assert_eq!(ids.len(), 384);
        assert!(ids.iter().all(|&i| i == u16::from(b'a')));
    }

    proptest! {
        #[test]
        fn roundtrip_within_budget(s in "\\PC{0,40}") {
            let max_len = s.len() + 3;
            let ids = encode_bytes(&s, max_len);
            prop_assert_eq!(ids.len(), max_len);
            prop_assert_eq!(decode_ids(&ids), s.as_bytes().to_vec());
        }

        #[test]
        fn injective(a in "\\PC{0,10}", b in "\\PC{0,10}") {
            let n = 48;
            prop_assume!(a != b);
            prop_assert_ne!(encode_bytes(&a, n), encode_bytes(&b, n));
        }
    }
}
