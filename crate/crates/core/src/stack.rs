//! Stacking an event stream into T polarity-colored frames.
//!
//! The stream's time span [t_min, t_max] is split into `t_count`
//! equal-duration windows. Within a window each pixel takes the color of
//! its latest event (positive red, negative blue); untouched pixels stay
//! white. The representative frame of a stack is frame 0.

use thiserror::Error;

use crate::event::EventStream;

pub const COLOR_BACKGROUND: [u8; 3] = [255, 255, 255];
pub const COLOR_POSITIVE: [u8; 3] = [255, 0, 0];
pub const COLOR_NEGATIVE: [u8; 3] = [0, 0, 255];

/// Default frame count used by the fixtures and the CLI.
pub const DEFAULT_T_COUNT: usize = 19;

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u16,
    pub height: u16,
    pub data: Vec<u8>,
}

impl Image {
    pub fn background(width: u16, height: u16) -> Self {
        Image {
            width,
            height,
            data: vec![255; width as usize * height as usize * 3],
        }
    }

    pub fn pixel(&self, x: u16, y: u16) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn set_pixel(&mut self, x: u16, y: u16, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// T frames plus the half-open microsecond interval each one covers.
/// The last interval is closed on the right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStack {
    pub frames: Vec<Image>,
    pub window_bounds: Vec<(u64, u64)>,
    pub t_count: usize,
}

#[derive(Debug, Error)]
pub enum StackError {
    #[error("t_count must be >= 1")]
    ZeroFrames,
}

/// Index of the window an event timestamp falls in.
///
/// Window i covers [t_min + i*span/T, t_min + (i+1)*span/T) over the
/// reals; t_max is assigned to the last window.
pub fn window_index(t: u64, t_min: u64, span: u64, t_count: usize) -> usize {
    if span == 0 {
        return 0;
    }
    let idx = ((t - t_min) as u128 * t_count as u128 / span as u128) as usize;
    idx.min(t_count - 1)
}

pub fn stack(stream: &EventStream, t_count: usize) -> Result<FrameStack, StackError> {
    if t_count == 0 {
        return Err(StackError::ZeroFrames);
    }
    let mut frames: Vec<Image> = (0..t_count)
        .map(|_| Image::background(stream.width, stream.height))
        .collect();
    if stream.events.is_empty() {
        return Ok(FrameStack {
            frames,
            window_bounds: vec![(0, 0); t_count],
            t_count,
        });
    }
    let t_min = stream.events.first().unwrap().t;
    let t_max = stream.events.last().unwrap().t;
    let span = t_max - t_min;
    // integer boundaries chosen so that membership in [start_i, start_{i+1})
    // agrees exactly with window_index
    let start = |i: usize| -> u64 {
        t_min + ((i as u128 * span as u128 + t_count as u128 - 1) / t_count as u128) as u64
    };
    let window_bounds: Vec<(u64, u64)> = (0..t_count)
        .map(|i| (start(i), if i + 1 == t_count { t_max } else { start(i + 1) }))
        .collect();
    // events are sorted, so later events in the same window overwrite
    for e in &stream.events {
        let w = window_index(e.t, t_min, span, t_count);
        let color = if e.p > 0 { COLOR_POSITIVE } else { COLOR_NEGATIVE };
        frames[w].set_pixel(e.x, e.y, color);
    }
    Ok(FrameStack {
        frames,
        window_bounds,
        t_count,
    })
}

/// The model-facing frame: always the first one.
pub fn representative_frame(stack: &FrameStack) -> &Image {
    &stack.frames[0]
}
