//! Equirectangular panorama and pinhole camera geometry.
//!
//! World frame: `+z` forward (north), `+x` right (east), `+y` up. Yaw is
//! measured clockwise seen from above, so yaw `π/2` looks along `+x`.
//! Longitude is `atan2(x, z)` and maps linearly onto panorama columns with
//! the forward direction at the horizontal centre.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Rgb = [u8; 3];

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(invalid(format!("{} pixels for a {width}x{height} image", pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: Rgb) {
        self.pixels[y * self.width + x] = value;
    }

    /// Binary PPM (P6, maxval 255).
    pub fn write_ppm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().flat_map(|p| p.iter().copied()).collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = Vec::new();
        // magic, width, height, maxval
        while header.len() < 4 {
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                return Err(Error::Format("truncated PPM header".into()));
            }
            let line = line.split('#').next().unwrap_or("");
            header.extend(line.split_whitespace().map(str::to_owned));
        }
        if header.len() > 4 {
            return Err(Error::Format("unexpected data in PPM header".into()));
        }
        if header[0] != "P6" {
            return Err(Error::Format(format!("unsupported PPM magic {}", header[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PPM header field {s:?}")))
        };
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height * 3];
        input
            .read_exact(&mut bytes)
            .map_err(|_| Error::Format("truncated PPM raster".into()))?;
        let pixels = bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::from_pixels(width, height, pixels)
    }
}

/// Full-sphere panorama: `width = 2 * height`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquirectImage(RgbImage);

impl EquirectImage {
    pub fn new(image: RgbImage) -> Result<Self> {
        if image.width != 2 * image.height || image.width < 8 {
            return Err(invalid(format!(
                "equirectangular image must be 2:1 and at least 8 px wide, got {}x{}",
                image.width, image.height
            )));
        }
        Ok(Self(image))
    }

    pub fn filled(height: usize, fill: Rgb) -> Result<Self> {
        Self::new(RgbImage::new(2 * height, height, fill))
    }

    pub fn image(&self) -> &RgbImage {
        &self.0
    }

    pub fn image_mut(&mut self) -> &mut RgbImage {
        &mut self.0
    }

    pub fn into_image(self) -> RgbImage {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    /// Bilinear sample at continuous panorama coordinates (pixel centres at
    /// `i + 0.5`), wrapping horizontally and clamping vertically.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = x - 0.5;
        let x0 = fx.floor();
        self.sample_split(x0 as i64, fx - x0, y)
    }

    fn sample_split(&self, col0: i64, tx: f64, y: f64) -> [f64; 3] {
        let w = self.width() as i64;
        let h = self.height() as i64;
        let fy = y - 0.5;
        let y0 = fy.floor();
        let ty = fy - y0;
        let r0 = (y0 as i64).clamp(0, h - 1) as usize;
        let r1 = (y0 as i64 + 1).clamp(0, h - 1) as usize;
        let c0 = col0.rem_euclid(w) as usize;
        let c1 = (col0 + 1).rem_euclid(w) as usize;
        let img = &self.0;
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let top = img.get(c0, r0)[ch] as f64 * (1.0 - tx) + img.get(c1, r0)[ch] as f64 * tx;
            let bottom = img.get(c0, r1)[ch] as f64 * (1.0 - tx) + img.get(c1, r1)[ch] as f64 * tx;
            *o = top * (1.0 - ty) + bottom * ty;
        }
        out
    }
}

/// Rectilinear camera looking along `yaw_rad` (clockwise from `+z`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerspectiveCamera {
    pub hfov_rad: f64,
    pub width_px: usize,
    pub height_px: usize,
    pub yaw_rad: f64,
    pub pitch_rad: f64,
}

impl Default for PerspectiveCamera {
    fn default() -> Self {
        Self {
            hfov_rad: 78f64.to_radians(),
            width_px: 640,
            height_px: 480,
            yaw_rad: 0.0,
            pitch_rad: 0.0,
        }
    }
}

impl PerspectiveCamera {
    pub fn new(hfov_rad: f64, width_px: usize, height_px: usize) -> Result<Self> {
        let cam = Self {
            hfov_rad,
            width_px,
            height_px,
            ..Self::default()
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_yaw(self, yaw_rad: f64) -> Self {
        Self { yaw_rad, ..self }
    }

    pub fn with_hfov(self, hfov_rad: f64) -> Self {
        Self { hfov_rad, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hfov_rad > 0.0 && self.hfov_rad < PI) {
            return Err(invalid(format!("hfov {} outside (0, pi)", self.hfov_rad)));
        }
        if self.width_px < 2 || self.height_px < 2 {
            return Err(invalid("camera frame must be at least 2x2"));
        }
        if !self.yaw_rad.is_finite() || !self.pitch_rad.is_finite() {
            return Err(invalid("non-finite camera orientation"));
        }
        Ok(())
    }

    /// Focal length in pixels, shared by both axes.
    pub fn focal_px(&self) -> f64 {
        (self.width_px as f64 / 2.0) / (self.hfov_rad / 2.0).tan()
    }

    pub fn vfov_rad(&self) -> f64 {
        2.0 * ((self.height_px as f64 / 2.0) / self.focal_px()).atan()
    }

    pub fn center(&self) -> (f64, f64) {
        (self.width_px as f64 / 2.0, self.height_px as f64 / 2.0)
    }

    /// World → camera frame rotation (inverse yaw, then inverse pitch).
    pub fn world_to_camera(&self, v: [f64; 3]) -> [f64; 3] {
        let (sy, cy) = self.yaw_rad.sin_cos();
        let x = v[0] * cy - v[2] * sy;
        let z = v[0] * sy + v[2] * cy;
        let (sp, cp) = self.pitch_rad.sin_cos();
        [x, v[1] * cp - z * sp, v[1] * sp + z * cp]
    }

    pub fn camera_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        let (sp, cp) = self.pitch_rad.sin_cos();
        let y = v[1] * cp + v[2] * sp;
        let z = -v[1] * sp + v[2] * cp;
        let (sy, cy) = self.yaw_rad.sin_cos();
        [v[0] * cy + z * sy, y, -v[0] * sy + z * cy]
    }
}

/// Unit direction in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Direction {
    pub fn normalized(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(invalid("cannot normalise a zero or non-finite vector"));
        }
        Ok(Self {
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn longitude(&self) -> f64 {
        self.x.atan2(self.z)
    }

    pub fn latitude(&self) -> f64 {
        self.y.clamp(-1.0, 1.0).asin()
    }
}

pub fn pixel_to_ray(cam: &PerspectiveCamera, u: f64, v: f64) -> Result<Direction> {
    if !u.is_finite() || !v.is_finite() {
        return Err(invalid(format!("non-finite pixel ({u}, {v})")));
    }
    cam.validate()?;
    let f = cam.focal_px();
    let (cx, cy) = cam.center();
    let local = [(u - cx) / f, -(v - cy) / f, 1.0];
    let w = cam.camera_to_world(local);
    Direction::normalized(w[0], w[1], w[2])
}

/// Projects a world direction through the camera; `None` when the direction
/// points at or behind the image plane.
pub fn ray_to_pixel(cam: &PerspectiveCamera, dir: &Direction) -> Option<(f64, f64)> {
    let c = cam.world_to_camera([dir.x, dir.y, dir.z]);
    if c[2] <= 1e-12 {
        return None;
    }
    let f = cam.focal_px();
    let (cx, cy) = cam.center();
    Some((cx + f * c[0] / c[2], cy - f * c[1] / c[2]))
}

pub fn ray_to_equirect(dir: &Direction, width: usize, height: usize) -> (f64, f64) {
    let lon = dir.longitude();
    let lat = dir.latitude();
    let x = (lon + PI) / TAU * width as f64;
    let y = (PI / 2.0 - lat) / PI * height as f64;
    (x, y)
}

pub fn equirect_to_ray(x: f64, y: f64, width: usize, height: usize) -> Direction {
    let lon = x / width as f64 * TAU - PI;
    let lat = PI / 2.0 - y / height as f64 * PI;
    let (sl, cl) = lon.sin_cos();
    let (sp, cp) = lat.sin_cos();
    Direction {
        x: cp * sl,
        y: sp,
        z: cp * cl,
    }
}

/// Resamples the panorama into a rectilinear view.
///
/// The per-pixel lookup is computed for the un-yawed camera and the yaw is
/// applied as a horizontal column shift, which is exact on the cylinder.
/// Whole-column shifts keep the bilinear weights bit-identical.
pub fn dewarp_crop(img: &EquirectImage, cam: &PerspectiveCamera) -> Result<RgbImage> {
    cam.validate()?;
    let (w, h) = (img.width(), img.height());
    let base_cam = cam.with_yaw(0.0);
    let shift = cam.yaw_rad.rem_euclid(TAU) / TAU * w as f64;
    let whole_shift = (shift.round() - shift).abs() < 1e-6;
    let mut out = RgbImage::new(cam.width_px, cam.height_px, [0, 0, 0]);
    for row in 0..cam.height_px {
        for col in 0..cam.width_px {
            let dir = pixel_to_ray(&base_cam, col as f64 + 0.5, row as f64 + 0.5)?;
            let (x, y) = ray_to_equirect(&dir, w, h);
            let rgb = if whole_shift {
                let fx = x - 0.5;
                let x0 = fx.floor();
                img.sample_split(x0 as i64 + shift.round() as i64, fx - x0, y)
            } else {
                img.sample(x + shift, y)
            };
            out.set(col, row, rgb.map(|c| c.round().clamp(0.0, 255.0) as u8));
        }
    }
    Ok(out)
}

/// `n` crops at yaw `k * 2π / n`, sharing the camera intrinsics.
pub fn generate_rotation_crops(img: &EquirectImage, cam: &PerspectiveCamera, n: usize) -> Result<Vec<RgbImage>> {
    if n == 0 {
        return Err(invalid("number of rotation crops must be at least 1"));
    }
    (0..n)
        .map(|k| dewarp_crop(img, &cam.with_yaw(k as f64 * TAU / n as f64)))
        .collect()
}

/// Rotates the scene about the vertical axis by `angle_rad`: content at
/// longitude `λ` moves to `λ + angle_rad`. The angle must be a whole number
/// of columns.
pub fn rotate_equirect(img: &EquirectImage, angle_rad: f64) -> Result<EquirectImage> {
    let w = img.width();
    let cols = angle_rad / TAU * w as f64;
    if (cols - cols.round()).abs() > 1e-6 {
        return Err(invalid(format!(
            "rotation {angle_rad} rad is not a whole number of columns"
        )));
    }
    let k = cols.round() as i64;
    let src = img.image();
    let mut out = src.clone();
    for row in 0..img.height() {
        for col in 0..w {
            let from = (col as i64 - k).rem_euclid(w as i64) as usize;
            out.set(col, row, src.get(from, row));
        }
    }
    Ok(EquirectImage(out))
}
