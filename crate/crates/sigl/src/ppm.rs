//! Binary PPM (P6, maxval 255) encoding and decoding, plus the affine map
//! between 8-bit pixels and the [−1, 1] tensors the networks produce.
//!
//! P6 is the one image format that is trivially bit-exact: a fixed-seed run
//! must reproduce every output byte, so no compressor is allowed anywhere
//! near the pixels.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use sigl_core::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpmImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples, height·width·3 bytes.
    pub rgb: Vec<u8>,
}

#[derive(Debug)]
pub enum PpmError {
    Io(std::io::Error),
    Malformed { offset: usize, expected: &'static str },
}

impl std::fmt::Display for PpmError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PpmError::Io(e) => write!(f, "ppm io: {e}"),
            PpmError::Malformed { offset, expected } => {
                write!(f, "malformed ppm at byte {offset}: expected {expected}")
            }
        }
    }
}

impl std::error::Error for PpmError {}

impl From<std::io::Error> for PpmError {
    fn from(e: std::io::Error) -> Self {
        PpmError::Io(e)
    }
}

impl PpmImage {
    pub fn new(width: usize, height: usize) -> Self {
        PpmImage {
            width,
            height,
            rgb: vec![0; width * height * 3],
        }
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.rgb[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.rgb.len() + 32);
        out.extend_from_slice(format!("P6\n{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PpmError> {
        let mut pos = 0usize;
        let expect = |pos: &mut usize, token: &[u8], what: &'static str| {
            if bytes.len() < *pos + token.len() || &bytes[*pos..*pos + token.len()] != token {
                return Err(PpmError::Malformed {
                    offset: *pos,
                    expected: what,
                });
            }
            *pos += token.len();
            Ok(())
        };
        expect(&mut pos, b"P6", "magic P6")?;
        let read_int = |pos: &mut usize| -> Result<usize, PpmError> {
            // single whitespace separators; generators in the wild may pad,
            // so accept any run of ascii whitespace
            let start = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos == start {
                return Err(PpmError::Malformed {
                    offset: *pos,
                    expected: "whitespace",
                });
            }
            let digits_start = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            if *pos == digits_start {
                return Err(PpmError::Malformed {
                    offset: *pos,
                    expected: "decimal integer",
                });
            }
            let s = std::str::from_utf8(&bytes[digits_start..*pos]).expect("ascii digits");
            s.parse().map_err(|_| PpmError::Malformed {
                offset: digits_start,
                expected: "integer in range",
            })
        };
        let width = read_int(&mut pos)?;
        let height = read_int(&mut pos)?;
        let maxval = read_int(&mut pos)?;
        if maxval != 255 {
            return Err(PpmError::Malformed {
                offset: pos,
                expected: "maxval 255",
            });
        }
        // exactly one whitespace byte separates header from pixels
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(PpmError::Malformed {
                offset: pos,
                expected: "single whitespace before pixel data",
            });
        }
        pos += 1;
        let need = width * height * 3;
        if bytes.len() - pos != need {
            return Err(PpmError::Malformed {
                offset: pos,
                expected: "width*height*3 pixel bytes",
            });
        }
        Ok(PpmImage {
            width,
            height,
            rgb: bytes[pos..].to_vec(),
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), PpmError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, PpmError> {
        Ok(Self::decode(&fs::read(path)?)?)
    }
}

/// Pixel byte → [−1, 1]: v = p/127.5 − 1.
pub fn byte_to_signed(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

/// [−1, 1] → pixel byte, clamped then rounded to nearest.
pub fn signed_to_byte(v: f64) -> u8 {
    let p = (v.clamp(-1.0, 1.0) + 1.0) * 127.5;
    p.round().min(255.0) as u8
}

/// One [3, H, W] tensor plane-set from an image.
pub fn image_to_tensor(img: &PpmImage) -> Tensor<f64> {
    let (w, h) = (img.width, img.height);
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = img.get(x, y);
            for c in 0..3 {
                data[c * h * w + y * w + x] = byte_to_signed(px[c]);
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("counted")
}

/// One image from a [3, H, W] slice of generator output.
pub fn tensor_to_image(chw: &[f64], h: usize, w: usize) -> PpmImage {
    let mut img = PpmImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let rgb = [
                signed_to_byte(chw[y * w + x]),
                signed_to_byte(chw[h * w + y * w + x]),
                signed_to_byte(chw[2 * h * w + y * w + x]),
            ];
            img.put(x, y, rgb);
        }
    }
    img
}

/// Tile a batch of [N, 3, H, W] samples row-major into one grid image.
pub fn tile_batch(batch: &Tensor<f64>, rows: usize, cols: usize) -> Result<PpmImage, String> {
    let s = batch.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(format!("expected [N,3,H,W] batch, got {s:?}"));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    if rows * cols != n {
        return Err(format!("{rows}×{cols} grid vs {n} samples"));
    }
    let mut out = PpmImage::new(cols * w, rows * h);
    let plane = 3 * h * w;
    for i in 0..n {
        let tile = tensor_to_image(&batch.data()[i * plane..(i + 1) * plane], h, w);
        let (ty, tx) = (i / cols, i % cols);
        for y in 0..h {
            for x in 0..w {
                out.put(tx * w + x, ty * h + y, tile.get(x, y));
            }
        }
    }
    Ok(out)
}
