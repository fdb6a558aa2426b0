//! Attention-map export: the recorded decoder attention, averaged across
//! all heads and all layers, renormalized by the maximum weight at each
//! timestep, written as CSV matrices and binary PGM images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ForwardOutput;

/// Divide each row of `rows x cols` by its own maximum (the per-timestep
/// renormalization used for visualization); the max entry becomes exactly 1.
fn renormalize_rows(data: &mut [f64], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            row.iter_mut().for_each(|v| *v /= max);
        }
    }
}

fn write_csv(path: &Path, data: &[f64], cols: usize) -> Result<()> {
    let mut text = String::new();
    for row in data.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_pgm(path: &Path, data: &[f64], cols: usize) -> Result<()> {
    let rows = data.len() / cols;
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    bytes.extend(data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Mean over layers and heads of `[heads, rows, cols]` matrices.
fn head_layer_mean(layers: &[Vec<f64>], heads: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut mean = vec![0.0; rows * cols];
    for layer in layers {
        for h in 0..heads {
            let base = h * rows * cols;
            for i in 0..rows * cols {
                mean[i] += layer[base + i];
            }
        }
    }
    let scale = 1.0 / (layers.len() * heads) as f64;
    mean.iter_mut().for_each(|v| *v *= scale);
    mean
}

/// Write the three visualization artifacts for one decoded sample:
///
/// * `temporal.{csv,pgm}` - the T x T self-attention grid, transposed so
///   column t carries query t's weights, renormalized per column;
/// * `spatial_frame_{t}.{csv,pgm}` - each frame's visual-token weights
///   reshaped to the H x W grid, renormalized per timestep;
/// * `text.{csv,pgm}` - the `[T, L]` text-token weights, renormalized per row.
pub fn export_attention_maps(out: &ForwardOutput, dir: &Path) -> Result<()> {
    if out.cross_attn.is_empty() || out.self_attn.is_empty() {
        return Err(Error::Data(
            "attention export needs recorded self- and cross-attention weights".into(),
        ));
    }
    std::fs::create_dir_all(dir)?;
    let heads = out.self_attn[0].shape()[0];
    let t = out.t;
    let span = out.hw + out.l;

    // Temporal self-attention: mean, renormalize per query, transpose so the
    // query axis runs along columns.
    let self_layers: Vec<Vec<f64>> = out.self_attn.iter().map(|a| a.data()).collect();
    let mut temporal = head_layer_mean(&self_layers, heads, t, t);
    renormalize_rows(&mut temporal, t);
    let mut grid = vec![0.0; t * t];
    for q in 0..t {
        for key in 0..t {
            grid[key * t + q] = temporal[q * t + key];
        }
    }
    write_csv(&dir.join("temporal.csv"), &grid, t)?;
    write_pgm(&dir.join("temporal.pgm"), &grid, t)?;

    // Cross-attention: mean over heads/layers, then per-frame visual maps
    // and the per-frame text-token weights.
    let cross_layers: Vec<Vec<f64>> = out.cross_attn.iter().map(|a| a.data()).collect();
    let cross = head_layer_mean(&cross_layers, heads, t, t * span);
    let mut text = vec![0.0; t * out.l];
    for frame in 0..t {
        let block = &cross[frame * t * span + frame * span..frame * t * span + (frame + 1) * span];
        let mut spatial = block[..out.hw].to_vec();
        renormalize_rows(&mut spatial, out.hw);
        write_csv(&dir.join(format!("spatial_frame_{frame:03}.csv")), &spatial, out.grid_w)?;
        write_pgm(&dir.join(format!("spatial_frame_{frame:03}.pgm")), &spatial, out.grid_w)?;
        text[frame * out.l..(frame + 1) * out.l].copy_from_slice(&block[out.hw..]);
    }
    renormalize_rows(&mut text, out.l);
    write_csv(&dir.join("text.csv"), &text, out.l)?;
    write_pgm(&dir.join("text.pgm"), &text, out.l)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renormalization_puts_the_max_at_exactly_one() {
        let mut data = vec![0.2, 0.4, 0.1, 0.05, 0.05, 0.9];
        renormalize_rows(&mut data, 3);
        assert_eq!(data[1], 1.0);
        assert_eq!(data[5], 1.0);
        assert_eq!(data[0], 0.5);
    }

    #[test]
    fn uniform_rows_renormalize_to_all_ones() {
        let mut data = vec![0.25; 8];
        renormalize_rows(&mut data, 4);
        assert!(data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pgm_header_and_payload_size() {
        let dir = std::env::temp_dir().join(format!("stvg-pgm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.pgm");
        write_pgm(&path, &[0.0, 0.5, 1.0, 0.25, 0.75, 1.0], 3).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), b"P5\n3 2\n255\n".len() + 6);
        assert_eq!(*bytes.last().unwrap(), 255);
    }
}
