//! Raw tensor dump: little-endian `u32` header `(H, W, C, format tag)` then the flat buffer.

use std::io::{Read, Write};

use super::{ElementFormat, Tensor, TensorData, TensorError};

pub fn write_raw<W: Write>(t: &Tensor, mut out: W) -> Result<(), TensorError> {
    for v in [t.height() as u32, t.width() as u32, t.channels() as u32, t.format().tag()] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * t.format().bytes_per_element());
    match t.data() {
        TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        TensorData::F16(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        TensorData::Fixed16 { codes, .. } => codes.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_raw<R: Read>(mut input: R) -> Result<Tensor, TensorError> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| TensorError::Truncated("header shorter than 16 bytes".into()))?;
    let word = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap());
    let (h, w, c) = (word(0) as usize, word(1) as usize, word(2) as usize);
    let format = ElementFormat::from_tag(word(3))?;
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| TensorError::Truncated("shape overflows".into()))?;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    let expected = n * format.bytes_per_element();
    if body.len() != expected {
        return Err(TensorError::Truncated(format!("expected {expected} payload bytes, found {}", body.len())));
    }
    let data = match format {
        ElementFormat::F32 => TensorData::F32(
            body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
        ),
        ElementFormat::F16 => TensorData::F16(
            body.chunks_exact(2).map(|b| u16::from_le_bytes(b.try_into().unwrap())).collect(),
        ),
        ElementFormat::Fixed16(format) => TensorData::Fixed16 {
            codes: body.chunks_exact(2).map(|b| i16::from_le_bytes(b.try_into().unwrap())).collect(),
            format,
        },
    };
    Tensor::new(h, w, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{convert_tensor, ElementKind};

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::from_f32(1, 2, 1, vec![1.0, -2.0]).unwrap();
        let mut bytes = Vec::new();
        write_raw(&t, &mut bytes).unwrap();
        assert_eq!(
            bytes,
            [
                1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, //
                0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0,
            ]
        );
    }

    #[test]
    fn all_formats_survive_a_dump() {
        let t = Tensor::from_fn(3, 4, 2, |y, x, c| y as f32 * 0.5 - x as f32 + c as f32 * 0.25).unwrap();
        for kind in [ElementKind::F32, ElementKind::F16, ElementKind::Q16] {
            let t = convert_tensor(&t, kind);
            let mut bytes = Vec::new();
            write_raw(&t, &mut bytes).unwrap();
            assert_eq!(read_raw(&bytes[..]).unwrap(), t);
        }
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let t = Tensor::zeros(2, 2, 2).unwrap();
        let mut bytes = Vec::new();
        write_raw(&t, &mut bytes).unwrap();
        for cut in [3, 16, bytes.len() - 1] {
            assert!(read_raw(&bytes[..cut]).is_err());
        }
    }
}
