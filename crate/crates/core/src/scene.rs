//! Egocentric RGB-D captures and the pooled difference images fed to the models.
//!
//! # Capture format
//!
//! One directory per trial:
//!
//! | file             | content                                                     |
//! |------------------|-------------------------------------------------------------|
//! | `pre.rgb.png`    | 8-bit RGB PNG, 640 wide x 480 high                          |
//! | `pre.depth.u16`  | 640*480 little-endian u16, row-major, millimeters, 0 = invalid |
//! | `post.rgb.png`   | as `pre.rgb.png`                                            |
//! | `post.depth.u16` | as `pre.depth.u16`                                          |
//!
//! The depth files are exactly 614 400 bytes with no header. RGB values are
//! normalized by 255; depth is converted to meters.

use std::fs;
use std::path::Path;

use stackdet_tensor::Tensor;

use crate::error::{CoreError, Result};

pub const FRAME_HEIGHT: usize = 480;
pub const FRAME_WIDTH: usize = 640;
pub const POOL: usize = 10;
pub const DELTA_HEIGHT: usize = FRAME_HEIGHT / POOL;
pub const DELTA_WIDTH: usize = FRAME_WIDTH / POOL;
/// Three per-channel differences plus the L2 channel.
pub const RGB_DELTA_CHANNELS: usize = 4;

const DEPTH_BYTES: usize = FRAME_HEIGHT * FRAME_WIDTH * 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pre,
    Post,
}

impl Phase {
    pub fn rgb_file(self) -> &'static str {
        match self {
            Phase::Pre => "pre.rgb.png",
            Phase::Post => "post.rgb.png",
        }
    }

    pub fn depth_file(self) -> &'static str {
        match self {
            Phase::Pre => "pre.depth.u16",
            Phase::Post => "post.depth.u16",
        }
    }
}

/// One RGB-D capture at full sensor resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    rgb: Tensor<f32>,
    depth: Tensor<f32>,
}

impl Frame {
    /// `rgb` is `[3,480,640]` in `[0,1]`, `depth` is `[1,480,640]` in meters (`>= 0`).
    pub fn new(rgb: Tensor<f32>, depth: Tensor<f32>) -> Result<Self> {
        if rgb.shape() != [3, FRAME_HEIGHT, FRAME_WIDTH] || depth.shape() != [1, FRAME_HEIGHT, FRAME_WIDTH] {
            return Err(CoreError::format(
                "frame",
                format!("expected rgb [3,480,640] and depth [1,480,640], got {:?} / {:?}", rgb.shape(), depth.shape()),
            ));
        }
        if rgb.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CoreError::format("frame", "rgb values outside [0,1]"));
        }
        if depth.data().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(CoreError::format("frame", "negative or non-finite depth"));
        }
        Ok(Self { rgb, depth })
    }

    pub fn rgb(&self) -> &Tensor<f32> {
        &self.rgb
    }

    pub fn depth(&self) -> &Tensor<f32> {
        &self.depth
    }

    /// Writes the frame in capture format. RGB is quantized to 8 bits and depth to millimeters.
    pub fn save(&self, dir: &Path, phase: Phase) -> Result<()> {
        let plane = FRAME_HEIGHT * FRAME_WIDTH;
        let rgb = self.rgb.data();
        let mut pixels = Vec::with_capacity(plane * 3);
        for i in 0..plane {
            for c in 0..3 {
                pixels.push((rgb[c * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        let img = image::RgbImage::from_raw(FRAME_WIDTH as u32, FRAME_HEIGHT as u32, pixels)
            .expect("buffer sized to frame");
        let rgb_path = dir.join(phase.rgb_file());
        img.save_with_format(&rgb_path, image::ImageFormat::Png)
            .map_err(|e| CoreError::format(rgb_path.display().to_string(), e.to_string()))?;

        let mut raw = Vec::with_capacity(DEPTH_BYTES);
        for &m in self.depth.data() {
            let mm = (m * 1000.0).round().clamp(0.0, u16::MAX as f32) as u16;
            raw.extend_from_slice(&mm.to_le_bytes());
        }
        let depth_path = dir.join(phase.depth_file());
        fs::write(&depth_path, raw).map_err(|e| CoreError::io(&depth_path, e))
    }
}

/// Reads one capture (an RGB PNG plus its raw depth file).
pub fn load_frame(rgb_path: &Path, depth_path: &Path) -> Result<Frame> {
    let ctx = rgb_path.display().to_string();
    let bytes = fs::read(rgb_path).map_err(|e| CoreError::io(rgb_path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| CoreError::format(&ctx, e.to_string()))?;
    if img.width() as usize != FRAME_WIDTH || img.height() as usize != FRAME_HEIGHT {
        return Err(CoreError::format(
            ctx,
            format!("resolution {}x{}, expected {FRAME_WIDTH}x{FRAME_HEIGHT}", img.width(), img.height()),
        ));
    }
    let img = img.into_rgb8();
    let plane = FRAME_HEIGHT * FRAME_WIDTH;
    let mut rgb = vec![0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            rgb[c * plane + i] = px.0[c] as f32 / 255.0;
        }
    }

    let raw = fs::read(depth_path).map_err(|e| CoreError::io(depth_path, e))?;
    if raw.len() != DEPTH_BYTES {
        return Err(CoreError::format(
            depth_path.display().to_string(),
            format!("{} bytes, expected {DEPTH_BYTES} (640x480 u16)", raw.len()),
        ));
    }
    let depth = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]]) as f32 / 1000.0).collect();

    Frame::new(
        Tensor::new([3, FRAME_HEIGHT, FRAME_WIDTH], rgb)?,
        Tensor::new([1, FRAME_HEIGHT, FRAME_WIDTH], depth)?,
    )
}

pub fn load_phase(dir: &Path, phase: Phase) -> Result<Frame> {
    load_frame(&dir.join(phase.rgb_file()), &dir.join(phase.depth_file()))
}

/// Loads the pre/post pair of a trial directory.
pub fn load_capture(dir: &Path) -> Result<(Frame, Frame)> {
    Ok((load_phase(dir, Phase::Pre)?, load_phase(dir, Phase::Post)?))
}

/// 10x10 average pooling with stride 10.
pub fn downsample(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() != 3 || s[1] % POOL != 0 || s[2] % POOL != 0 || s[1] == 0 || s[2] == 0 {
        return Err(CoreError::Tensor(stackdet_tensor::TensorError::Shape {
            op: "downsample",
            detail: format!("spatial dims of {s:?} must be positive multiples of {POOL}"),
        }));
    }
    Ok(stackdet_tensor::avg_pool2d(image, POOL, POOL)?)
}

/// Pooled pre/post differences: `rgb` is `[4,48,64]` (R, G, B, L2), `depth` is `[1,48,64]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDelta {
    pub rgb: Tensor<f32>,
    pub depth: Tensor<f32>,
}

impl FrameDelta {
    pub fn zeros() -> Self {
        Self {
            rgb: Tensor::zeros([RGB_DELTA_CHANNELS, DELTA_HEIGHT, DELTA_WIDTH]),
            depth: Tensor::zeros([1, DELTA_HEIGHT, DELTA_WIDTH]),
        }
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.rgb.shape() != [RGB_DELTA_CHANNELS, DELTA_HEIGHT, DELTA_WIDTH]
            || self.depth.shape() != [1, DELTA_HEIGHT, DELTA_WIDTH]
        {
            return Err(CoreError::Tensor(stackdet_tensor::TensorError::Shape {
                op: "frame delta",
                detail: format!("got rgb {:?}, depth {:?}", self.rgb.shape(), self.depth.shape()),
            }));
        }
        Ok(())
    }
}

/// Difference first, pool second, then the L2 channel over the pooled differences.
pub fn frame_delta(pre: &Frame, post: &Frame) -> Result<FrameDelta> {
    let rgb_diff = post.rgb.zip_map(&pre.rgb, |a, b| a - b)?;
    let depth_diff = post.depth.zip_map(&pre.depth, |a, b| a - b)?;
    let pooled = downsample(&rgb_diff)?;
    let depth = downsample(&depth_diff)?;

    let plane = pooled.shape()[1] * pooled.shape()[2];
    let d = pooled.data();
    let mut rgb = Vec::with_capacity(4 * plane);
    rgb.extend_from_slice(d);
    rgb.extend((0..plane).map(|i| {
        let (r, g, b) = (d[i], d[plane + i], d[2 * plane + i]);
        (r * r + g * g + b * b).sqrt()
    }));
    let rgb = Tensor::new([RGB_DELTA_CHANNELS, pooled.shape()[1], pooled.shape()[2]], rgb)?;
    Ok(FrameDelta { rgb, depth })
}

/// Reads a trial directory and returns its difference images.
pub fn load_delta(dir: &Path) -> Result<FrameDelta> {
    let (pre, post) = load_capture(dir)?;
    frame_delta(&pre, &post)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_frame(rgb: [f32; 3], depth: f32) -> Frame {
        let plane = FRAME_HEIGHT * FRAME_WIDTH;
        let data = (0..3 * plane).map(|i| rgb[i / plane]).collect();
        Frame::new(
            Tensor::new([3, FRAME_HEIGHT, FRAME_WIDTH], data).unwrap(),
            Tensor::full([1, FRAME_HEIGHT, FRAME_WIDTH], depth),
        )
        .unwrap()
    }

    #[test]
    fn downsample_constant_and_block_mean() {
        let c = Tensor::full([2, FRAME_HEIGHT, FRAME_WIDTH], 0.42f32);
        let y = downsample(&c).unwrap();
        assert_eq!(y.shape(), &[2, 48, 64]);
        assert!(y.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));

        // block (row 3, col 5) holds 1..=100, everything else zero
        let mut img = Tensor::zeros([1, FRAME_HEIGHT, FRAME_WIDTH]);
        for dy in 0..10 {
            for dx in 0..10 {
                img.data_mut()[(30 + dy) * FRAME_WIDTH + 50 + dx] = (dy * 10 + dx + 1) as f32;
            }
        }
        let y = downsample(&img).unwrap();
        assert_eq!(y.data()[3 * 64 + 5], 50.5);
        assert_eq!(y.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn downsample_rejects_indivisible() {
        assert!(downsample(&Tensor::zeros([1, 48, 65])).is_err());
        assert!(downsample(&Tensor::zeros([48, 60])).is_err());
    }

    #[test]
    fn identical_frames_give_zero_delta() {
        let f = flat_frame([0.2, 0.5, 0.9], 0.6);
        let d = frame_delta(&f, &f).unwrap();
        assert_eq!(d.rgb.shape(), &[4, 48, 64]);
        assert_eq!(d.depth.shape(), &[1, 48, 64]);
        assert!(d.rgb.data().iter().chain(d.depth.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn l2_channel_three_four_five() {
        let pre = flat_frame([0.0, 0.0, 0.0], 0.5);
        let post = flat_frame([0.3, 0.4, 0.0], 0.5);
        let d = frame_delta(&pre, &post).unwrap();
        let plane = 48 * 64;
        assert!(d.rgb.data()[3 * plane..].iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn frame_rejects_bad_values() {
        let bad = Tensor::full([3, FRAME_HEIGHT, FRAME_WIDTH], 1.5f32);
        assert!(Frame::new(bad, Tensor::zeros([1, FRAME_HEIGHT, FRAME_WIDTH])).is_err());
        let neg = Tensor::full([1, FRAME_HEIGHT, FRAME_WIDTH], -0.1f32);
        assert!(Frame::new(Tensor::zeros([3, FRAME_HEIGHT, FRAME_WIDTH]), neg).is_err());
        assert!(Frame::new(Tensor::zeros([3, 240, 320]), Tensor::zeros([1, 240, 320])).is_err());
    }

    #[test]
    fn phase_file_names() {
        assert_eq!(Phase::Pre.rgb_file(), "pre.rgb.png");
        assert_eq!(Phase::Post.rgb_file(), "post.rgb.png");
        assert_eq!(Phase::Post.depth_file(), "post.depth.u16");
    }
}
