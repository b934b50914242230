use std::path::Path;

use aru_core::dsp::{spectrogram, Spectrogram};
use image::{Rgb, RgbImage};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub window: usize,
    pub hop: usize,
    pub channel: u16,
    pub max_width: usize,
    pub floor_db: f64,
}

/// One channel of a WAV file as normalized samples, plus its rate.
pub fn read_channel(path: &Path, channel: u16) -> Result<(Vec<f64>, u32), CliError> {
    let mut reader = hound::WavReader::open(path).map_err(|e| CliError::io(path, e))?;
    let spec = reader.spec();
    if channel >= spec.channels {
        return Err(CliError::usage(format!(
            "channel {channel} out of range, {} has {} channels",
            path.display(),
            spec.channels
        )));
    }
    let stride = usize::from(spec.channels);
    let pick = usize::from(channel);
    let bad = |e: hound::Error| CliError::invalid(format!("{}: {e}", path.display()));
    let samples = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1)) - 1.0;
            reader
                .samples::<i32>()
                .skip(pick)
                .step_by(stride)
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<Vec<_>, _>>()
                .map_err(bad)?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .skip(pick)
            .step_by(stride)
            .map(|s| s.map(f64::from))
            .collect::<Result<Vec<_>, _>>()
            .map_err(bad)?,
    };
    Ok((samples, spec.sample_rate))
}

/// Draws low frequencies at the bottom, one pixel row per bin.
pub fn render(spec: &Spectrogram, max_width: usize, floor_db: f64) -> RgbImage {
    let cols = spec.columns.len();
    let group = cols.div_ceil(max_width.max(1)).max(1);
    let width = cols.div_ceil(group);
    let bins = spec.bins();
    let mut img = RgbImage::new(width as u32, bins as u32);
    for x in 0..width {
        let chunk = &spec.columns[x * group..((x + 1) * group).min(cols)];
        for k in 0..bins {
            let mag = chunk.iter().map(|c| c[k]).sum::<f64>() / chunk.len() as f64;
            let db = 20.0 * mag.max(1e-12).log10();
            let level = ((db - floor_db) / -floor_db).clamp(0.0, 1.0);
            img.put_pixel(x as u32, (bins - 1 - k) as u32, heat(level));
        }
    }
    img
}

fn heat(level: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.0],
        [80.0, 18.0, 123.0],
        [212.0, 72.0, 66.0],
        [251.0, 180.0, 26.0],
        [252.0, 255.0, 164.0],
    ];
    let pos = level * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let t = pos - i as f64;
    let mix = |c: usize| (STOPS[i][c] + (STOPS[i + 1][c] - STOPS[i][c]) * t).round() as u8;
    Rgb([mix(0), mix(1), mix(2)])
}

pub fn spectrogram_png(wav: &Path, png: &Path, opts: &RenderOptions) -> Result<(), CliError> {
    let (samples, rate) = read_channel(wav, opts.channel)?;
    let spec = spectrogram(&samples, opts.window, opts.hop, f64::from(rate))
        .map_err(|e| CliError::usage(e.to_string()))?;
    let img = render(&spec, opts.max_width, opts.floor_db);
    img.save(png).map_err(|e| CliError::io(png, e))?;
    println!(
        "{} x {} px, {} columns, {:.2} Hz per bin -> {}",
        img.width(),
        img.height(),
        spec.columns.len(),
        spec.bin_hz(),
        png.display()
    );
    Ok(())
}
