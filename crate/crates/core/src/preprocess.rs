//! Frame pipeline: flicker-removing pixel max, grayscale, bilinear
//! resize with center crop to 84x84, and 4-frame stacking.
//!
//! Values stay in [0, 255] through the frame stages; division by 255
//! happens once, when a [`StateTensor`] is assembled for the network.

use crate::error::{Error, Result};
use std::collections::VecDeque;
use std::ops::Range;

/// Processed frame edge length.
pub const FRAME_EDGE: usize = 84;
/// Resize target height before the vertical crop.
pub const RESIZE_HEIGHT: usize = 110;
/// Rows kept by the vertical center crop: (110 - 84) / 2 = 13.
pub const CROP_TOP: usize = 13;
/// Frames stacked into one network input.
pub const STACK_DEPTH: usize = 4;

/// Interleaved RGB byte image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawFrame {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RawFrame {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid_config("frame dimensions must be positive"));
        }
        if data.len() != height * width * 3 {
            return Err(Error::invalid_config(format!(
                "frame data length {} does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(RawFrame { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        RawFrame::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Paints a rectangle, clipped to the frame bounds.
    pub fn fill_rect(&mut self, rows: Range<i64>, cols: Range<i64>, rgb: [u8; 3]) {
        let y0 = rows.start.max(0) as usize;
        let y1 = (rows.end.max(0) as usize).min(self.height);
        let x0 = cols.start.max(0) as usize;
        let x1 = (cols.end.max(0) as usize).min(self.width);
        for y in y0..y1 {
            for x in x0..x1 {
                let i = (y * self.width + x) * 3;
                self.data[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }
}

/// Single-channel frame with values in [0, 255].
#[derive(Clone, Debug, PartialEq)]
pub struct GrayFrame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayFrame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid_config(format!(
                "gray data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(GrayFrame { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Entrywise maximum of two equally shaped frames. Removes sprite
/// flicker when applied to consecutive raw frames.
pub fn frame_max(a: &RawFrame, b: &RawFrame) -> Result<RawFrame> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::invalid_config(format!(
            "frame shapes differ: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x.max(y)).collect();
    RawFrame::new(a.height, a.width, data)
}

/// BT.601 luma: 0.299 R + 0.587 G + 0.114 B, computed in f64 per pixel
/// and rounded once, so gray inputs map to themselves exactly.
pub fn to_grayscale(f: &RawFrame) -> GrayFrame {
    let data = f
        .data
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) as f32)
        .collect();
    GrayFrame { height: f.height, width: f.width, data }
}

/// Bilinear resize with half-pixel centers: source coordinate
/// `(dst + 0.5) * scale - 0.5` in f64, edges clamped; the fractional
/// weight is rounded to f32 and `lerp(a, b, t) = a + t (b - a)` runs
/// in f32.
pub fn resize_bilinear(g: &GrayFrame, out_h: usize, out_w: usize) -> Result<GrayFrame> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid_config("resize target must be positive"));
    }
    let scale_y = g.height as f64 / out_h as f64;
    let scale_x = g.width as f64 / out_w as f64;
    let mut data = Vec::with_capacity(out_h * out_w);
    for dy in 0..out_h {
        let sy = ((dy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (g.height - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(g.height - 1);
        let ty = (sy - y0 as f64) as f32;
        for dx in 0..out_w {
            let sx = ((dx as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (g.width - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(g.width - 1);
            let tx = (sx - x0 as f64) as f32;
            let top = lerp(g.at(y0, x0), g.at(y0, x1), tx);
            let bottom = lerp(g.at(y1, x0), g.at(y1, x1), tx);
            data.push(lerp(top, bottom, ty));
        }
    }
    GrayFrame::new(out_h, out_w, data)
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// 210x160 gray frame to 84x84: bilinear resize to 110x84, then keep
/// rows 13..97 (vertical center crop).
pub fn resize_crop(g: &GrayFrame) -> Result<GrayFrame> {
    if g.height != 210 || g.width != 160 {
        return Err(Error::invalid_config(format!(
            "resize_crop expects a 210x160 frame, got {}x{}",
            g.height, g.width
        )));
    }
    let resized = resize_bilinear(g, RESIZE_HEIGHT, FRAME_EDGE)?;
    let start = CROP_TOP * FRAME_EDGE;
    let data = resized.data[start..start + FRAME_EDGE * FRAME_EDGE].to_vec();
    GrayFrame::new(FRAME_EDGE, FRAME_EDGE, data)
}

/// Full raw-to-processed step for one observation: flicker max of the
/// two most recent raw frames, grayscale, resize and crop.
pub fn process_frame(current: &RawFrame, previous: &RawFrame) -> Result<GrayFrame> {
    resize_crop(&to_grayscale(&frame_max(current, previous)?))
}

/// Network input: `channels` planes of `height` x `width`, values in
/// [0, 1], stored plane-major (channel, then row, then column).
#[derive(Clone, Debug, PartialEq)]
pub struct StateTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl StateTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid_config(format!(
                "tensor data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if !data.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::invalid_config("tensor entries must lie in [0, 1]"));
        }
        Ok(StateTensor { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// One channel plane, row-major.
    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }
}

/// Ring of the 4 most recent processed frames. The first push after a
/// reset replicates that frame into all 4 slots.
#[derive(Clone, Debug, Default)]
pub struct FrameStack {
    frames: VecDeque<GrayFrame>,
}

impl FrameStack {
    pub fn new() -> Self {
        FrameStack { frames: VecDeque::with_capacity(STACK_DEPTH) }
    }

    pub fn reset(&mut self) {
        self.frames.clear();
    }

    /// Pushes a processed frame and returns the stacked input, oldest
    /// frame in channel 0, newest in channel 3, scaled to [0, 1].
    pub fn push(&mut self, frame: GrayFrame) -> Result<StateTensor> {
        if frame.height != FRAME_EDGE || frame.width != FRAME_EDGE {
            return Err(Error::invalid_config(format!(
                "stack frames must be {FRAME_EDGE}x{FRAME_EDGE}, got {}x{}",
                frame.height, frame.width
            )));
        }
        if self.frames.is_empty() {
            for _ in 0..STACK_DEPTH - 1 {
                self.frames.push_back(frame.clone());
            }
        } else {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
        let mut data = Vec::with_capacity(STACK_DEPTH * FRAME_EDGE * FRAME_EDGE);
        for f in &self.frames {
            data.extend(f.data.iter().map(|v| v / 255.0));
        }
        StateTensor::new(FRAME_EDGE, FRAME_EDGE, STACK_DEPTH, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use std::path::PathBuf;

    fn checker(height: usize, width: usize) -> RawFrame {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                let v = (((x * 7 + y * 13) % 256) as u8, ((x * 3) % 256) as u8);
                data.extend_from_slice(&[v.0, v.1, ((y * 5) % 256) as u8]);
            }
        }
        RawFrame::new(height, width, data).unwrap()
    }

    #[test]
    fn raw_frame_shape_is_validated() {
        assert!(RawFrame::new(2, 2, vec![0; 12]).is_ok());
        assert!(RawFrame::new(2, 2, vec![0; 11]).is_err());
        assert!(RawFrame::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn frame_max_is_idempotent_and_commutative() {
        let a = checker(6, 5);
        let b = {
            let mut f = checker(6, 5);
            f.fill_rect(1..3, 0..4, [200, 10, 250]);
            f
        };
        assert_eq!(frame_max(&a, &a).unwrap(), a);
        assert_eq!(frame_max(&a, &b).unwrap(), frame_max(&b, &a).unwrap());
        let lo = RawFrame::filled(2, 2, [10, 10, 10]).unwrap();
        let hi = RawFrame::filled(2, 2, [200, 0, 10]).unwrap();
        assert_eq!(frame_max(&lo, &hi).unwrap().pixel(0, 0), [200, 10, 10]);
        let other = checker(5, 5);
        assert!(frame_max(&a, &other).is_err());
    }

    #[test]
    fn grayscale_spot_values() {
        let white = RawFrame::filled(1, 1, [255, 255, 255]).unwrap();
        assert_eq!(to_grayscale(&white).at(0, 0), 255.0);
        let green = RawFrame::filled(1, 1, [0, 255, 0]).unwrap();
        assert!((to_grayscale(&green).at(0, 0) - 149.685).abs() < 1e-3);
        for v in [0u8, 17, 128, 254] {
            let gray = RawFrame::filled(1, 1, [v, v, v]).unwrap();
            assert_eq!(to_grayscale(&gray).at(0, 0), v as f32);
        }
    }

    #[test]
    fn resize_of_a_constant_frame_is_constant() {
        let f = RawFrame::filled(210, 160, [77, 77, 77]).unwrap();
        let out = resize_crop(&to_grayscale(&f)).unwrap();
        assert_eq!(out.height(), 84);
        assert_eq!(out.width(), 84);
        for &v in out.data() {
            assert_eq!(v, 77.0);
        }
    }

    #[test]
    fn resize_crop_rejects_other_shapes() {
        let small = GrayFrame::new(50, 40, vec![0.0; 2000]).unwrap();
        assert!(resize_crop(&small).is_err());
    }

    #[test]
    fn resize_preserves_range() {
        let g = to_grayscale(&checker(210, 160));
        let out = resize_crop(&g).unwrap();
        for &v in out.data() {
            assert!((0.0..=255.0).contains(&v));
        }
    }

    #[test]
    fn pipeline_is_pure() {
        let a = checker(210, 160);
        let b = {
            let mut f = checker(210, 160);
            f.fill_rect(20..60, 30..90, [255, 255, 255]);
            f
        };
        assert_eq!(process_frame(&a, &b).unwrap(), process_frame(&a, &b).unwrap());
    }

    #[test]
    fn stack_prefills_then_evicts_in_order() {
        let frame = |v: f32| GrayFrame::new(84, 84, vec![v; 84 * 84]).unwrap();
        let mut stack = FrameStack::new();
        let s1 = stack.push(frame(255.0)).unwrap();
        for c in 0..4 {
            assert_eq!(s1.plane(c)[0], 1.0);
        }
        let mut last = None;
        for v in [51.0, 102.0, 153.0] {
            last = Some(stack.push(frame(v)).unwrap());
        }
        let s4 = last.unwrap();
        assert_eq!(s4.plane(0)[0], 1.0);
        assert_eq!(s4.plane(1)[0], 51.0 / 255.0);
        assert_eq!(s4.plane(2)[0], 102.0 / 255.0);
        assert_eq!(s4.plane(3)[0], 153.0 / 255.0);
        let s5 = stack.push(frame(204.0)).unwrap();
        assert_eq!(s5.plane(0)[0], 51.0 / 255.0);
        assert_eq!(s5.plane(3)[0], 204.0 / 255.0);
        assert!(stack.push(GrayFrame::new(2, 2, vec![0.0; 4]).unwrap()).is_err());
    }

    #[test]
    fn state_tensor_checks_shape_and_range() {
        assert!(StateTensor::new(2, 2, 1, vec![0.0, 0.5, 1.0, 0.25]).is_ok());
        assert!(StateTensor::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(StateTensor::new(2, 2, 1, vec![0.0, 0.5, 1.5, 0.25]).is_err());
    }

    fn golden_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
    }

    fn write_blob(path: &PathBuf, height: u32, width: u32, kind: u8, payload: &[u8]) {
        let mut out = Vec::new();
        out.extend_from_slice(b"G84F");
        out.extend_from_slice(&height.to_le_bytes());
        out.extend_from_slice(&width.to_le_bytes());
        out.push(kind);
        out.extend_from_slice(payload);
        fs::write(path, out).unwrap();
    }

    fn read_blob(path: &PathBuf, kind: u8) -> (u32, u32, Vec<u8>) {
        let raw = fs::read(path).unwrap();
        assert_eq!(&raw[..4], b"G84F", "bad magic in {path:?}");
        let height = u32::from_le_bytes(raw[4..8].try_into().unwrap());
        let width = u32::from_le_bytes(raw[8..12].try_into().unwrap());
        assert_eq!(raw[12], kind, "element kind mismatch in {path:?}");
        (height, width, raw[13..].to_vec())
    }

    /// Independent scalar reference used only to generate the stored
    /// expectation; the committed bytes are the contract afterwards.
    fn reference_resize_crop(g: &GrayFrame) -> Vec<f32> {
        let mut resized = vec![0.0f32; 110 * 84];
        for dy in 0..110usize {
            for dx in 0..84usize {
                let sy = ((dy as f64 + 0.5) * (210.0 / 110.0) - 0.5).clamp(0.0, 209.0);
                let sx = ((dx as f64 + 0.5) * (160.0 / 84.0) - 0.5).clamp(0.0, 159.0);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(209), (x0 + 1).min(159));
                let (ty, tx) = ((sy - y0 as f64) as f32, (sx - x0 as f64) as f32);
                let top = g.at(y0, x0) + tx * (g.at(y0, x1) - g.at(y0, x0));
                let bot = g.at(y1, x0) + tx * (g.at(y1, x1) - g.at(y1, x0));
                resized[dy * 84 + dx] = top + ty * (bot - top);
            }
        }
        resized[13 * 84..97 * 84].to_vec()
    }

    fn synthetic_gradient_frame() -> RawFrame {
        let mut data = Vec::with_capacity(210 * 160 * 3);
        for y in 0..210usize {
            for x in 0..160usize {
                let r = ((y * 255) / 209) as u8;
                let g = ((x * 255) / 159) as u8;
                let b = (((x + y) * 255) / 368) as u8;
                data.extend_from_slice(&[r, g, b]);
            }
        }
        RawFrame::new(210, 160, data).unwrap()
    }

    #[test]
    fn golden_resize_crop_is_byte_stable() {
        let dir = golden_dir();
        let input_path = dir.join("gradient_input.bin");
        let expected_path = dir.join("gradient_resized.bin");
        if std::env::var("GOLDEN_WRITE").is_ok() {
            fs::create_dir_all(&dir).unwrap();
            let frame = synthetic_gradient_frame();
            write_blob(&input_path, 210, 160, 1, frame.data());
            let expected = reference_resize_crop(&to_grayscale(&frame));
            let bytes: Vec<u8> =
                expected.iter().flat_map(|v| v.to_le_bytes()).collect();
            write_blob(&expected_path, 84, 84, 2, &bytes);
        }
        let (h, w, input) = read_blob(&input_path, 1);
        let frame = RawFrame::new(h as usize, w as usize, input).unwrap();
        assert_eq!(frame, synthetic_gradient_frame(), "stored input drifted");
        let (eh, ew, expected) = read_blob(&expected_path, 2);
        assert_eq!((eh, ew), (84, 84));
        let out = resize_crop(&to_grayscale(&frame)).unwrap();
        let got: Vec<u8> = out.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(got, expected, "resize output differs from stored bytes");
    }

    fn f32_bytes(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Every stage of the raw-to-network pipeline against stored bytes:
    /// flicker max, grayscale, and a two-push frame stack.
    #[test]
    fn golden_pipeline_stages_are_byte_stable() {
        let dir = golden_dir();
        let checker_path = dir.join("checker_input.bin");
        let maxed_path = dir.join("pipeline_maxed.bin");
        let gray_path = dir.join("pipeline_gray.bin");
        let stack_path = dir.join("pipeline_stack.bin");
        let frame_a = synthetic_gradient_frame();
        let frame_b = checker(210, 160);
        if std::env::var("GOLDEN_WRITE").is_ok() {
            fs::create_dir_all(&dir).unwrap();
            write_blob(&checker_path, 210, 160, 1, frame_b.data());
            let maxed = frame_max(&frame_a, &frame_b).unwrap();
            write_blob(&maxed_path, 210, 160, 1, maxed.data());
            let gray = to_grayscale(&maxed);
            write_blob(&gray_path, 210, 160, 2, &f32_bytes(gray.data()));
            let mut stack = FrameStack::new();
            stack.push(process_frame(&frame_a, &frame_a).unwrap()).unwrap();
            let tensor = stack.push(process_frame(&frame_b, &frame_a).unwrap()).unwrap();
            write_blob(&stack_path, (STACK_DEPTH * FRAME_EDGE) as u32, FRAME_EDGE as u32, 2, &f32_bytes(tensor.data()));
        }
        let (h, w, checker_bytes) = read_blob(&checker_path, 1);
        assert_eq!((h, w), (210, 160));
        assert_eq!(checker_bytes, frame_b.data(), "stored checker input drifted");

        let (_, _, maxed_expected) = read_blob(&maxed_path, 1);
        let maxed = frame_max(&frame_a, &frame_b).unwrap();
        assert_eq!(maxed.data(), &maxed_expected[..], "flicker max differs from stored bytes");

        let (_, _, gray_expected) = read_blob(&gray_path, 2);
        let gray = to_grayscale(&maxed);
        assert_eq!(f32_bytes(gray.data()), gray_expected, "grayscale differs from stored bytes");

        let (sh, sw, stack_expected) = read_blob(&stack_path, 2);
        assert_eq!((sh as usize, sw as usize), (STACK_DEPTH * FRAME_EDGE, FRAME_EDGE));
        let mut stack = FrameStack::new();
        stack.push(process_frame(&frame_a, &frame_a).unwrap()).unwrap();
        let tensor = stack.push(process_frame(&frame_b, &frame_a).unwrap()).unwrap();
        assert_eq!(f32_bytes(tensor.data()), stack_expected, "stack tensor differs from stored bytes");
    }
}
