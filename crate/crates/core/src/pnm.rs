//! Binary netpbm codec: PGM (`P5`) and PPM (`P6`).
//!
//! Decoding keeps the raw samples and maxval so that `encode(decode(x)) == x`
//! for canonical files (single-space separated header, no comments).

use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Header {
    width: usize,
    height: usize,
    channels: usize,
    maxval: u16,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Pnm("expected P5 or P6 magic".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Pnm("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pnm(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Pnm(format!("number out of range at byte {start}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Pnm("missing whitespace after maxval".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Pnm("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Pnm(format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(Header {
        width,
        height,
        channels,
        maxval: maxval as u16,
        data_offset: pos + 1,
    })
}

pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    let h = parse_header(bytes)?;
    let n = h.width * h.height * h.channels;
    let wide = h.maxval > 255;
    let need = n * if wide { 2 } else { 1 };
    let body = &bytes[h.data_offset..];
    if body.len() < need {
        return Err(Error::Pnm(format!(
            "truncated raster: {} of {need} bytes",
            body.len()
        )));
    }
    let samples: Vec<u16> = if wide {
        body[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        body[..need].iter().map(|&b| b as u16).collect()
    };
    if let Some(&s) = samples.iter().find(|&&s| s > h.maxval) {
        return Err(Error::Pnm(format!(
            "sample {s} exceeds maxval {}",
            h.maxval
        )));
    }
    Ok(Pnm {
        width: h.width,
        height: h.height,
        channels: h.channels,
        maxval: h.maxval,
        samples,
    })
}

pub fn encode(p: &Pnm) -> Vec<u8> {
    let magic = if p.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n{}\n", p.width, p.height, p.maxval).into_bytes();
    if p.maxval > 255 {
        for s in &p.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(p.samples.iter().map(|&s| s as u8));
    }
    out
}

impl Pnm {
    pub fn to_image(&self) -> Image {
        let m = self.maxval as f64;
        Image::new(
            self.width,
            self.height,
            self.channels,
            self.samples.iter().map(|&s| s as f64 / m).collect(),
        )
        .expect("decoded dimensions are consistent")
    }

    /// 8-bit quantization of an image.
    pub fn from_image(img: &Image) -> Pnm {
        Pnm {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            maxval: 255,
            samples: img
                .data()
                .iter()
                .map(|&v| (v * 255.0).round() as u16)
                .collect(),
        }
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
        .map(|p| p.to_image())
        .map_err(|e| Error::Pnm(format!("{}: {e}", path.display())))
}

/// Width and height from the header alone.
pub fn read_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = Vec::with_capacity(512);
    BufReader::new(file)
        .take(512)
        .read_to_end(&mut head)
        .map_err(|e| Error::io(path, e))?;
    let h = parse_header(&head).map_err(|e| Error::Pnm(format!("{}: {e}", path.display())))?;
    Ok((h.width, h.height))
}

/// Writes `img` as 8-bit PPM (RGB) or PGM (gray) depending on its channel count.
pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(&Pnm::from_image(img))).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_comments_and_16_bit() {
        let mut bytes = b"P5\n# hi\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0x02, 0xff, 0xff]);
        let p = decode(&bytes).unwrap();
        assert_eq!(p.samples, vec![0x0102, 0xffff]);
        assert_eq!(p.to_image().data()[1], 1.0);
    }

    #[test]
    fn truncated_raster_is_rejected() {
        assert!(decode(b"P6\n2 2\n255\n\x00\x00\x00").is_err());
        assert!(decode(b"P3\n1 1\n255\n0 0 0").is_err());
    }

    #[test]
    fn sample_above_maxval_is_rejected() {
        assert!(decode(b"P5\n1 1\n100\n\xc8").is_err());
    }

    proptest! {
        #[test]
        fn canonical_files_round_trip(
            w in 1usize..6, h in 1usize..6, rgb in any::<bool>(), wide in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let channels = if rgb { 3 } else { 1 };
            let maxval: u16 = if wide { 1000 } else { 255 };
            let samples = (0..w * h * channels)
                .map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 7) % (maxval as u64 + 1)) as u16)
                .collect();
            let p = Pnm { width: w, height: h, channels, maxval, samples };
            let bytes = encode(&p);
            prop_assert_eq!(&decode(&bytes).unwrap(), &p);
            prop_assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
        }

        #[test]
        fn eight_bit_images_survive_float_conversion(samples in proptest::collection::vec(any::<u8>(), 12)) {
            let p = Pnm { width: 2, height: 2, channels: 3, maxval: 255, samples: samples.iter().map(|&s| s as u16).collect() };
            prop_assert_eq!(Pnm::from_image(&p.to_image()), p);
        }
    }
}
