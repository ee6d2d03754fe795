//! Contrast-threshold event synthesis from intensity-frame sequences.
//!
//! Each pixel tracks a reference log-intensity. Between consecutive
//! frames, every full multiple of the contrast threshold crossed by
//! log(I + eps) emits one event, with timestamps linearly interpolated
//! between the frame stamps at the crossing points. The reference
//! advances by the emitted multiple of the threshold rather than
//! snapping to the new value.

use num_traits::Float;
use thiserror::Error;

use crate::event::{EventPoint, EventStream};
use crate::font::{glyph, GLYPH_HEIGHT, GLYPH_WIDTH};

/// Ordered single-channel frames with strictly increasing timestamps.
/// Intensities live in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySequence<R> {
    pub width: u16,
    pub height: u16,
    pub frames: Vec<Vec<R>>,
    pub timestamps: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatorConfig<R> {
    pub contrast_threshold: R,
    pub log_eps: R,
}

impl<R: Float> Default for SimulatorConfig<R> {
    fn default() -> Self {
        SimulatorConfig {
            contrast_threshold: R::from(0.2).unwrap(),
            log_eps: R::from(1e-3).unwrap(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("sequence must contain at least one frame")]
    Empty,
    #[error("frame {0} geometry mismatch: {1} pixels, expected {2}")]
    Geometry(usize, usize, usize),
    #[error("timestamps must be strictly increasing (frame {0})")]
    NonIncreasingTime(usize),
    #[error("config: contrast threshold and log eps must be positive")]
    BadConfig,
}

impl<R: Float> IntensitySequence<R> {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.frames.is_empty() || self.frames.len() != self.timestamps.len() {
            return Err(SimError::Empty);
        }
        let n = self.width as usize * self.height as usize;
        for (i, f) in self.frames.iter().enumerate() {
            if f.len() != n {
                return Err(SimError::Geometry(i, f.len(), n));
            }
        }
        for i in 1..self.timestamps.len() {
            if self.timestamps[i] <= self.timestamps[i - 1] {
                return Err(SimError::NonIncreasingTime(i));
            }
        }
        Ok(())
    }
}

/// Run the contrast-threshold model over a frame sequence.
///
/// A single-frame sequence yields a valid empty stream.
pub fn simulate<R: Float>(
    seq: &IntensitySequence<R>,
    cfg: &SimulatorConfig<R>,
) -> Result<EventStream, SimError> {
    seq.validate()?;
    if !(cfg.contrast_threshold > R::zero()) || !(cfg.log_eps > R::zero()) {
        return Err(SimError::BadConfig);
    }
    let c = cfg.contrast_threshold;
    let eps = cfg.log_eps;
    let n_px = seq.width as usize * seq.height as usize;

    let mut l_ref: Vec<R> = seq.frames[0].iter().map(|&v| (v + eps).ln()).collect();
    let mut events: Vec<EventPoint> = Vec::new();
    for k in 1..seq.frames.len() {
        let t_prev = seq.timestamps[k - 1];
        let dt = seq.timestamps[k] - t_prev;
        let frame = &seq.frames[k];
        for px in 0..n_px {
            let l_new = (frame[px] + eps).ln();
            let delta = l_new - l_ref[px];
            let magnitude = delta.abs();
            if magnitude < c {
                continue;
            }
            let n_cross = (magnitude / c).floor();
            let count = n_cross.to_f64().unwrap() as u64;
            let polarity: i8 = if delta > R::zero() { 1 } else { -1 };
            let x = (px % seq.width as usize) as u16;
            let y = (px / seq.width as usize) as u16;
            for j in 1..=count {
                // crossing j happens when the accumulated change reaches j*C
                let frac = R::from(j).unwrap() * c / magnitude;
                let offset = (R::from(dt).unwrap() * frac).floor().to_f64().unwrap() as u64;
                events.push(EventPoint {
                    x,
                    y,
                    t: t_prev + offset.min(dt),
                    p: polarity,
                });
            }
            let step = if polarity > 0 { n_cross * c } else { -(n_cross * c) };
            l_ref[px] = l_ref[px] + step;
        }
    }
    events.sort_by_key(|e| e.t);
    Ok(EventStream {
        width: seq.width,
        height: seq.height,
        events,
        source_id: String::new(),
    })
}

/// Render `text` as a moving binary raster: dark glyphs on a light
/// background, shifted one pixel right per frame. Fixture generator for
/// exercising the full pipeline without real recordings.
pub fn render_text_sequence<R: Float>(
    text: &str,
    n_frames: usize,
) -> Result<IntensitySequence<R>, SimError> {
    if text.is_empty() || n_frames < 2 {
        return Err(SimError::Empty);
    }
    let chars: Vec<char> = text.chars().collect();
    let margin = 2usize;
    let width = margin + chars.len() * (GLYPH_WIDTH + 1) + margin + n_frames;
    let height = margin + GLYPH_HEIGHT + margin;
    let bg = R::one();
    let fg = R::from(0.05).unwrap();
    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let mut frame = vec![bg; width * height];
        for (ci, &ch) in chars.iter().enumerate() {
            let rows = glyph(ch);
            let x0 = margin + k + ci * (GLYPH_WIDTH + 1);
            for (gy, row) in rows.iter().enumerate() {
                for gx in 0..GLYPH_WIDTH {
                    if row >> (GLYPH_WIDTH - 1 - gx) & 1 == 1 {
                        frame[(margin + gy) * width + x0 + gx] = fg;
                    }
                }
            }
        }
        frames.push(frame);
    }
    Ok(IntensitySequence {
        width: width as u16,
        height: height as u16,
        frames,
        timestamps: (0..n_frames as u64).map(|k| k * 1000).collect(),
    })
}
