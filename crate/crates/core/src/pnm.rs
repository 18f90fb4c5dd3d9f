//! Binary PGM (`P5`), PPM (`P6`) and grayscale PFM (`Pf`) readers and writers.
//!
//! PGM/PPM are written with `maxval` 255. PFM rows are stored bottom-to-top;
//! a negative scale marks little-endian samples, positive big-endian. The
//! writer always emits little-endian with scale `-1`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, ImageFloat, ImageGray, ImageRgb, LabelMap, Mask};

/// Any image this module can decode.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyImage {
    Gray(ImageGray),
    Rgb(ImageRgb),
    Float(ImageFloat),
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            let c = self.buf[self.pos];
            if c == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("truncated header".into()));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .map_err(|_| Error::Format("non-ascii header".into()))
    }

    fn usize_token(&mut self, what: &str) -> Result<usize> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| Error::Format(format!("bad {what} '{t}'")))
    }

    /// Consumes exactly one whitespace byte separating header and payload.
    fn single_ws(&mut self) -> Result<()> {
        match self.buf.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::Format("missing whitespace after header".into())),
        }
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }
}

fn netpbm_header<'a>(buf: &'a [u8], magic: &str) -> Result<(usize, usize, Cursor<'a>)> {
    let mut c = Cursor { buf, pos: 0 };
    let m = c.token()?;
    if m != magic {
        return Err(Error::Format(format!("expected magic {magic}, found '{m}'")));
    }
    let w = c.usize_token("width")?;
    let h = c.usize_token("height")?;
    let maxval = c.usize_token("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval} (only 255)")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    c.single_ws()?;
    Ok((w, h, c))
}

fn payload<'a>(c: &Cursor<'a>, needed: usize) -> Result<&'a [u8]> {
    let rest = c.rest();
    if rest.len() < needed {
        return Err(Error::Format(format!(
            "truncated payload: need {needed} bytes, have {}",
            rest.len()
        )));
    }
    Ok(&rest[..needed])
}

pub fn decode_pgm(buf: &[u8]) -> Result<ImageGray> {
    let (w, h, c) = netpbm_header(buf, "P5")?;
    let data = payload(&c, w * h)?.to_vec();
    Image::from_vec(w, h, data)
}

pub fn decode_ppm(buf: &[u8]) -> Result<ImageRgb> {
    let (w, h, c) = netpbm_header(buf, "P6")?;
    let data = payload(&c, w * h * 3)?
        .chunks_exact(3)
        .map(|p| [p[0], p[1], p[2]])
        .collect();
    Image::from_vec(w, h, data)
}

pub fn decode_pfm(buf: &[u8]) -> Result<ImageFloat> {
    let mut c = Cursor { buf, pos: 0 };
    let m = c.token()?;
    match m {
        "Pf" => {}
        "PF" => return Err(Error::Format("three-channel PF is not supported".into())),
        other => return Err(Error::Format(format!("expected magic Pf, found '{other}'"))),
    }
    let w = c.usize_token("width")?;
    let h = c.usize_token("height")?;
    let scale_tok = c.token()?;
    let scale: f32 = scale_tok
        .parse()
        .map_err(|_| Error::Format(format!("bad scale '{scale_tok}'")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format(format!("bad scale '{scale_tok}'")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    c.single_ws()?;
    let little = scale < 0.0;
    let bytes = payload(&c, w * h * 4)?;
    let mut data = vec![0f32; w * h];
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // file row 0 is the bottom image row
        let (fx, fy) = (i % w, i / w);
        data[(h - 1 - fy) * w + fx] = v;
    }
    Image::from_vec(w, h, data)
}

pub fn encode_pgm(img: &ImageGray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn encode_ppm(img: &ImageRgb) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.reserve(img.len() * 3);
    for p in img.data() {
        out.extend_from_slice(p);
    }
    out
}

pub fn encode_pfm(img: &ImageFloat) -> Vec<u8> {
    let (w, h) = img.dims();
    let mut out = format!("Pf\n{w} {h}\n-1\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&img.get(x, y).to_le_bytes());
        }
    }
    out
}

/// Decodes by magic number.
pub fn decode_image(buf: &[u8]) -> Result<AnyImage> {
    match buf.get(..2) {
        Some(b"P5") => decode_pgm(buf).map(AnyImage::Gray),
        Some(b"P6") => decode_ppm(buf).map(AnyImage::Rgb),
        Some(b"Pf") | Some(b"PF") => decode_pfm(buf).map(AnyImage::Float),
        _ => Err(Error::Format("unsupported magic number".into())),
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<AnyImage> {
    decode_image(&read_all(path.as_ref())?)
}

pub fn write_image(img: &AnyImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes = match img {
        AnyImage::Gray(g) => encode_pgm(g),
        AnyImage::Rgb(c) => encode_ppm(c),
        AnyImage::Float(f) => encode_pfm(f),
    };
    write_all(path.as_ref(), &bytes)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<ImageGray> {
    decode_pgm(&read_all(path.as_ref())?)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageRgb> {
    decode_ppm(&read_all(path.as_ref())?)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<ImageFloat> {
    decode_pfm(&read_all(path.as_ref())?)
}

pub fn write_pgm(img: &ImageGray, path: impl AsRef<Path>) -> Result<()> {
    write_all(path.as_ref(), &encode_pgm(img))
}

pub fn write_ppm(img: &ImageRgb, path: impl AsRef<Path>) -> Result<()> {
    write_all(path.as_ref(), &encode_ppm(img))
}

pub fn write_pfm(img: &ImageFloat, path: impl AsRef<Path>) -> Result<()> {
    write_all(path.as_ref(), &encode_pfm(img))
}

/// Mask as PGM: 255 valid, 0 invalid.
pub fn mask_to_gray(mask: &Mask) -> ImageGray {
    mask.map(|&v| if v { 255 } else { 0 })
}

/// Writes `<stem>.pfm` and `<stem>_mask.pgm`. Invalid pixels hold 0 in the PFM.
pub fn write_depth_map(depth: &DepthMap, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    write_pfm(depth.depth(), dir.join(format!("{stem}.pfm")))?;
    write_pgm(&mask_to_gray(depth.valid()), dir.join(format!("{stem}_mask.pgm")))
}

pub fn read_depth_map(dir: impl AsRef<Path>, stem: &str) -> Result<DepthMap> {
    let dir = dir.as_ref();
    let depth = read_pfm(dir.join(format!("{stem}.pfm")))?;
    let mask = read_pgm(dir.join(format!("{stem}_mask.pgm")))?;
    DepthMap::new(depth, mask.map(|&v| v != 0))
}

pub fn write_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(labels.image(), path)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    LabelMap::new(read_pgm(path)?)
}
