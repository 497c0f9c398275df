//! Separable bilinear and nearest-neighbour resampling.
//!
//! Bilinear sampling uses half-pixel centres without antialiasing, so the same
//! interpolation matrix serves image resizing and saliency upsampling.

use ndarray::{Array2, Array3};

/// Row-major `dst × src` matrix whose rows hold the two bilinear taps.
pub fn bilinear_matrix(src: usize, dst: usize) -> Vec<f32> {
    let mut m = vec![0.0f32; dst * src];
    if src == 0 {
        return m;
    }
    let scale = src as f64 / dst as f64;
    for i in 0..dst {
        let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(src - 1);
        let frac = (pos - i0 as f64) as f32;
        m[i * src + i0] += 1.0 - frac;
        m[i * src + i1] += frac;
    }
    m
}

fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    let pos = ((i as f64 + 0.5) * src as f64 / dst as f64).floor() as usize;
    pos.min(src - 1)
}

/// Bilinear resize of an `H×W×C` image.
pub fn resize_bilinear(img: &Array3<f32>, height: usize, width: usize) -> Array3<f32> {
    let (h, w, c) = img.dim();
    if (h, w) == (height, width) {
        return img.clone();
    }
    let rows = bilinear_matrix(h, height);
    let cols = bilinear_matrix(w, width);
    // Horizontal pass, then vertical.
    let mut tmp = Array3::<f32>::zeros((h, width, c));
    for y in 0..h {
        for x in 0..width {
            let taps = &cols[x * w..(x + 1) * w];
            for (sx, &wt) in taps.iter().enumerate() {
                if wt != 0.0 {
                    for ch in 0..c {
                        tmp[[y, x, ch]] += wt * img[[y, sx, ch]];
                    }
                }
            }
        }
    }
    let mut out = Array3::<f32>::zeros((height, width, c));
    for y in 0..height {
        let taps = &rows[y * h..(y + 1) * h];
        for (sy, &wt) in taps.iter().enumerate() {
            if wt != 0.0 {
                for x in 0..width {
                    for ch in 0..c {
                        out[[y, x, ch]] += wt * tmp[[sy, x, ch]];
                    }
                }
            }
        }
    }
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    out
}

/// Bilinear resize of a single-channel map. No clamping is applied.
pub fn upsample_map(map: &Array2<f32>, height: usize, width: usize) -> Array2<f32> {
    let (h, w) = map.dim();
    let rows = Array2::from_shape_vec((height, h), bilinear_matrix(h, height))
        .expect("bilinear matrix shape");
    let cols = Array2::from_shape_vec((width, w), bilinear_matrix(w, width))
        .expect("bilinear matrix shape");
    rows.dot(map).dot(&cols.t())
}

/// Nearest-neighbour resize; keeps masks binary.
pub fn resize_nearest(mask: &Array2<u8>, height: usize, width: usize) -> Array2<u8> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((height, width), |(y, x)| {
        mask[[nearest_index(y, h, height), nearest_index(x, w, width)]]
    })
}
