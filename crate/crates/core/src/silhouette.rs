//! Binary silhouettes: binarization, boundary pixels, uniform foreground
//! sampling and the foreground membership test.
//!
//! Pixel `(x, y)` is column `x`, row `y`, origin top-left. A continuous point
//! `(x, y)` belongs to pixel `(floor(x), floor(y))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default foreground threshold against a black background.
pub const DEFAULT_THRESHOLD: f64 = 0.05;

/// Row-major `W x H` real image with 1 or 3 channels, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Invalid(format!("images need 1 or 3 channels, got {channels}")));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(Error::shape("image", format!("{width}x{height}x{channels} with {} values", data.len())));
        }
        Ok(Image { width, height, channels, data })
    }
}

/// Binary mask, 1 = foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SilhouetteImage {
    width: usize,
    height: usize,
    mask: Vec<u8>,
}

impl SilhouetteImage {
    /// Row-major mask with values in `{0, 1}`. An empty foreground is allowed
    /// here; operations that need one check it themselves.
    pub fn new(width: usize, height: usize, mask: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || mask.len() != width * height {
            return Err(Error::shape("silhouette", format!("{width}x{height} with {} values", mask.len())));
        }
        if mask.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("silhouette values must be 0 or 1".into()));
        }
        Ok(SilhouetteImage { width, height, mask })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut mask = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                mask.push(f(x, y) as u8);
            }
        }
        SilhouetteImage { width, height, mask }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    /// Mask value at an in-bounds pixel.
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x] == 1
    }

    /// Mask value, treating out-of-bounds pixels as background.
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&v| v == 1).count()
    }

    /// Foreground pixels `(x, y)` in row-major order.
    pub fn foreground_pixels(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.push([x, y]);
                }
            }
        }
        out
    }

    /// The mask as a single-channel image, row-major.
    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.mask.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Boundary pixel coordinates `(x, y)`, sorted row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundarySet {
    pub pixels: Vec<[usize; 2]>,
}

impl BoundarySet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Pixel coordinates as reals, in the same order.
    pub fn as_points(&self) -> Vec<[f64; 2]> {
        self.pixels.iter().map(|p| [p[0] as f64, p[1] as f64]).collect()
    }
}

/// `M` points drawn uniformly over the foreground of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPoints2D {
    pub view: usize,
    pub points: Vec<[f64; 2]>,
}

/// Foreground wherever the channel mean exceeds `threshold`.
pub fn binarize(image: &Image, threshold: f64) -> Result<SilhouetteImage> {
    let c = image.channels;
    let mask: Vec<u8> = image
        .data
        .chunks_exact(c)
        .map(|px| (px.iter().sum::<f64>() / c as f64 > threshold) as u8)
        .collect();
    let s = SilhouetteImage { width: image.width, height: image.height, mask };
    if s.foreground_count() == 0 {
        return Err(Error::EmptyForeground);
    }
    Ok(s)
}

/// Foreground pixels with at least one background 4-neighbour; the image
/// border counts as background.
pub fn extract_boundary(s: &SilhouetteImage) -> Result<BoundarySet> {
    let mut pixels = Vec::new();
    for y in 0..s.height {
        for x in 0..s.width {
            if !s.get(x, y) {
                continue;
            }
            let (xi, yi) = (x as isize, y as isize);
            let exposed = [(xi - 1, yi), (xi + 1, yi), (xi, yi - 1), (xi, yi + 1)]
                .iter()
                .any(|&(nx, ny)| !s.get_signed(nx, ny));
            if exposed {
                pixels.push([x, y]);
            }
        }
    }
    if pixels.is_empty() {
        return Err(Error::EmptyForeground);
    }
    Ok(BoundarySet { pixels })
}

/// `m` points: a foreground pixel chosen uniformly with replacement plus a
/// uniform sub-pixel offset in `[0, 1)^2`.
pub fn sample_foreground(s: &SilhouetteImage, m: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    let fg = s.foreground_pixels();
    if fg.is_empty() {
        return Err(Error::EmptyForeground);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m)
        .map(|_| {
            let [px, py] = fg[rng.gen_range(0..fg.len())];
            let jx: f64 = rng.gen();
            let jy: f64 = rng.gen();
            [inside_pixel(px, jx), inside_pixel(py, jy)]
        })
        .collect())
}

/// `p + offset`, clamped below `p + 1` so rounding never crosses the edge.
fn inside_pixel(p: usize, offset: f64) -> f64 {
    let v = p as f64 + offset;
    let edge = (p + 1) as f64;
    if v < edge {
        v
    } else {
        f64::from_bits(edge.to_bits() - 1)
    }
}

pub fn is_foreground(s: &SilhouetteImage, x: f64, y: f64) -> bool {
    let (fx, fy) = (x.floor(), y.floor());
    if !(fx >= 0.0 && fy >= 0.0 && fx < s.width as f64 && fy < s.height as f64) {
        return false;
    }
    s.get(fx as usize, fy as usize)
}
