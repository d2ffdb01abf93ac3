//! Binary PGM (P5) heatmaps of MI matrices.

use std::fs;
use std::path::Path;

use coalition_core::MiMatrix;

/// Gray level of `v` on a linear 0..=max scale; everything is black when the
/// maximum is not positive.
pub fn gray_level(v: f64, max: f64) -> u8 {
    if !(max > 0.0) || !v.is_finite() {
        return 0;
    }
    (v / max * 255.0).round().clamp(0.0, 255.0) as u8
}

/// P5 image with each matrix entry drawn as a `cell x cell` square.
pub fn heatmap_bytes(m: &MiMatrix, cell: usize) -> Vec<u8> {
    let cell = cell.max(1);
    let n = m.n();
    let side = n * cell;
    let max = m.values().iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.reserve(side * side);
    for i in 0..n {
        let row: Vec<u8> = (0..n)
            .flat_map(|j| std::iter::repeat_n(gray_level(m.get(i, j), max), cell))
            .collect();
        for _ in 0..cell {
            out.extend_from_slice(&row);
        }
    }
    out
}

pub fn render_heatmap(m: &MiMatrix, path: impl AsRef<Path>, cell: usize) -> std::io::Result<()> {
    fs::write(path, heatmap_bytes(m, cell))
}

#[cfg(test)]
mod tests {
    use super::*;
    use coalition_core::planted_block;

    fn pixels(bytes: &[u8]) -> &[u8] {
        let mut newlines = 0;
        let start = bytes
            .iter()
            .position(|&b| {
                newlines += usize::from(b == b'\n');
                newlines == 3
            })
            .unwrap();
        &bytes[start + 1..]
    }

    #[test]
    fn zero_matrix_is_black() {
        let img = heatmap_bytes(&MiMatrix::zeros(3), 2);
        assert!(img.starts_with(b"P5\n6 6\n255\n"));
        assert_eq!(pixels(&img), &[0u8; 36][..]);
    }

    #[test]
    fn two_blocks_are_white_on_black() {
        let m = planted_block(2, 1.0, 0.0).unwrap();
        let img = heatmap_bytes(&m, 1);
        assert!(img.starts_with(b"P5\n4 4\n255\n"));
        let px = pixels(&img);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j || i / 2 != j / 2 { 0 } else { 255 };
                assert_eq!(px[i * 4 + j], want, "({i},{j})");
            }
        }
    }

    #[test]
    fn max_entry_is_white_and_scale_is_linear() {
        let m = MiMatrix::from_fn(3, |i, j| (i + j) as f64 / 3.0).unwrap();
        let px = pixels(&heatmap_bytes(&m, 1)).to_vec();
        assert_eq!(px.iter().copied().max(), Some(255));
        assert_eq!(px[1], gray_level(1.0 / 3.0, 1.0));
        assert_eq!(gray_level(0.5, 1.0), 128);
    }
}
