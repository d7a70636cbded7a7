//! PTSR1 tensor container: `PTSR1\n`, u8 rank, rank x u32 LE dims, then the
//! row-major payload as f32 LE. Values are narrowed to f32 on write.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"PTSR1\n";
const KIND: &str = "PTSR1";

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank()).map_err(|_| Error::format(KIND, format!("rank {} exceeds 255", t.rank())))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 1 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(rank);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::format(KIND, format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let rest = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| Error::format(KIND, "missing magic"))?;
    let (&rank, rest) = rest.split_first().ok_or_else(|| Error::format(KIND, "missing rank"))?;
    let rank = rank as usize;
    if rest.len() < 4 * rank {
        return Err(Error::format(KIND, "truncated dims"));
    }
    let (dim_bytes, payload) = rest.split_at(4 * rank);
    let dims: Vec<usize> = dim_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(KIND, "element count overflows"))?;
    if payload.len() != 4 * count {
        return Err(Error::format(
            KIND,
            format!("expected {} payload bytes, found {}", 4 * count, payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    Tensor::from_vec(&dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_by_hand() {
        let t = Tensor::from_vec(&[2, 1], vec![1.0, -0.5]).unwrap();
        let mut want = b"PTSR1\n\x02".to_vec();
        want.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0]);
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert_eq!(encode(&t).unwrap(), want);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode(b"PTSR2\n\x00").is_err());
        assert!(decode(b"PTSR1\n\x01\x02\x00\x00\x00\x00\x00").is_err());
        assert!(decode(b"PTSR1\n").is_err());
        let scalar = decode(b"PTSR1\n\x00\x00\x00\x80\x3f").unwrap();
        assert_eq!((scalar.rank(), scalar.data()), (0, &[1.0][..]));
    }

    proptest! {
        #[test]
        fn f32_values_round_trip(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(i as u32 + 1) & 0x7f7f_ffff) as f64).collect();
            let t = Tensor::from_vec(&dims, data).unwrap();
            let bytes = encode(&t).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
