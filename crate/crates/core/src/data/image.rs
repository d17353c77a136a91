//! Binary PPM (P6, maxval 255) decoding and encoding.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Decodes an image to a `[3, H, W]` tensor with values in `[0, 1]`.
pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::ImageNotFound(path.into())),
        Err(e) => return Err(e.into()),
    };
    if !bytes.starts_with(b"P6") {
        return Err(Error::UnsupportedFormat(path.into()));
    }
    let malformed = |reason: &str| Error::MalformedImage {
        path: path.into(),
        reason: reason.into(),
    };

    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(malformed("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("non-numeric header field"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing separator after header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed("zero extent"));
    }
    if maxval != 255 {
        return Err(malformed("only 8-bit samples (maxval 255) are supported"));
    }
    let plane = width * height;
    let raster = &bytes[pos..];
    if raster.len() < 3 * plane {
        return Err(malformed("raster shorter than width x height x 3"));
    }
    let scale = T::one() / T::lit(255.0);
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in raster[..3 * plane].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::lit(px[c] as f64) * scale;
        }
    }
    Tensor::new(vec![3, height, width], data)
}

/// Writes a `[3, H, W]` tensor as P6, clamping to `[0, 1]` and rounding to
/// the nearest 8-bit level.
pub fn save_image<T: Real>(path: impl AsRef<Path>, image: &Tensor<T>) -> Result<()> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::dim(format!("expected an image [3, H, W], got {s:?}"))),
    };
    if c != 3 {
        return Err(Error::dim(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    let d = image.data();
    for i in 0..plane {
        for ch in 0..3 {
            let v = d[ch * plane + i].as_f64().clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}
