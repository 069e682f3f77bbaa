//! Direct 2-D convolution kernels (stride 1, odd kernel, "same" zero
//! padding) and their gradients.
//!
//! Loops are arranged so the innermost accumulation runs over contiguous
//! row slices, which the compiler vectorizes.

/// Forward convolution. `x` is `[c_in, h, w]`, `weight` is
/// `[c_out, c_in, k, k]`, output is `[c_out, h, w]`.
pub fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), c_in * h * w);
    debug_assert_eq!(weight.len(), c_out * c_in * k * k);
    debug_assert_eq!(out.len(), c_out * h * w);
    debug_assert!(k % 2 == 1);
    let pad = k / 2;
    let plane = h * w;

    for oc in 0..c_out {
        let out_plane = &mut out[oc * plane..(oc + 1) * plane];
        let b = bias.map_or(0.0, |b| b[oc]);
        out_plane.fill(b);
        for ic in 0..c_in {
            let x_plane = &x[ic * plane..(ic + 1) * plane];
            let w_base = ((oc * c_in) + ic) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                let y0 = (-dy).max(0) as usize;
                let y1 = ((h as isize - dy).min(h as isize)) as usize;
                for kx in 0..k {
                    let wv = weight[w_base + ky * k + kx];
                    let dx = kx as isize - pad as isize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = ((w as isize - dx).min(w as isize)) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let src_row = (y as isize + dy) as usize;
                        let src =
                            &x_plane[src_row * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        let dst = &mut out_plane[y * w + x0..][..x1 - x0];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the input: correlation of `grad_out` with the kernel
/// flipped in space and transposed in channels.
pub fn conv2d_input_grad(
    grad_out: &[f64],
    weight: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    grad_x: &mut [f64],
) {
    debug_assert_eq!(grad_out.len(), c_out * h * w);
    debug_assert_eq!(grad_x.len(), c_in * h * w);
    let pad = k / 2;
    let plane = h * w;

    for ic in 0..c_in {
        let gx_plane = &mut grad_x[ic * plane..(ic + 1) * plane];
        for oc in 0..c_out {
            let go_plane = &grad_out[oc * plane..(oc + 1) * plane];
            let w_base = ((oc * c_in) + ic) * k * k;
            for ky in 0..k {
                // grad_x[y] receives grad_out[y - dy]
                let dy = ky as isize - pad as isize;
                let y0 = dy.max(0) as usize;
                let y1 = ((h as isize + dy).min(h as isize)) as usize;
                for kx in 0..k {
                    let wv = weight[w_base + ky * k + kx];
                    let dx = kx as isize - pad as isize;
                    let x0 = dx.max(0) as usize;
                    let x1 = ((w as isize + dx).min(w as isize)) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let src_row = (y as isize - dy) as usize;
                        let src =
                            &go_plane[src_row * w + (x0 as isize - dx) as usize..][..x1 - x0];
                        let dst = &mut gx_plane[y * w + x0..][..x1 - x0];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the kernel weights.
pub fn conv2d_weight_grad(
    x: &[f64],
    grad_out: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    grad_w: &mut [f64],
) {
    debug_assert_eq!(grad_w.len(), c_out * c_in * k * k);
    let pad = k / 2;
    let plane = h * w;

    for oc in 0..c_out {
        let go_plane = &grad_out[oc * plane..(oc + 1) * plane];
        for ic in 0..c_in {
            let x_plane = &x[ic * plane..(ic + 1) * plane];
            let w_base = ((oc * c_in) + ic) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                let y0 = (-dy).max(0) as usize;
                let y1 = ((h as isize - dy).min(h as isize)) as usize;
                for kx in 0..k {
                    let dx = kx as isize - pad as isize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = ((w as isize - dx).min(w as isize)) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    // Four independent accumulators break the add
                    // dependency chain; summation order stays fixed.
                    let mut acc = [0.0f64; 4];
                    for y in y0..y1 {
                        let src_row = (y as isize + dy) as usize;
                        let src =
                            &x_plane[src_row * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        let go = &go_plane[y * w + x0..][..x1 - x0];
                        let mut chunks = go.chunks_exact(4).zip(src.chunks_exact(4));
                        for (gc, sc) in &mut chunks {
                            acc[0] += gc[0] * sc[0];
                            acc[1] += gc[1] * sc[1];
                            acc[2] += gc[2] * sc[2];
                            acc[3] += gc[3] * sc[3];
                        }
                        let tail = (x1 - x0) / 4 * 4;
                        for (g, s) in go[tail..].iter().zip(&src[tail..]) {
                            acc[0] += g * s;
                        }
                    }
                    grad_w[w_base + ky * k + kx] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
                }
            }
        }
    }
}

/// Gradient w.r.t. the bias: spatial sum per output channel.
pub fn conv2d_bias_grad(grad_out: &[f64], c_out: usize, plane: usize, grad_b: &mut [f64]) {
    for oc in 0..c_out {
        grad_b[oc] += grad_out[oc * plane..(oc + 1) * plane].iter().sum::<f64>();
    }
}


#[cfg(test)]
mod bench_probe {
    use super::*;

    #[test]
    #[ignore]
    fn throughput_probe() {
        let (c_in, c_out, h, w, k) = (8, 32, 20, 20, 3);
        let x = vec![0.5; c_in * h * w];
        let wgt = vec![0.01; c_out * c_in * k * k];
        let g = vec![0.3; c_out * h * w];
        let macs = (c_out * c_in * k * k * h * w) as f64;

        let mut out = vec![0.0; c_out * h * w];
        let t = std::time::Instant::now();
        let reps = 2000;
        for _ in 0..reps {
            conv2d_forward(&x, &wgt, None, c_in, c_out, h, w, k, &mut out);
        }
        println!("fwd   : {:.2} GMAC/s", macs * reps as f64 / t.elapsed().as_secs_f64() / 1e9);

        let mut gx = vec![0.0; x.len()];
        let t = std::time::Instant::now();
        for _ in 0..reps {
            conv2d_input_grad(&g, &wgt, c_in, c_out, h, w, k, &mut gx);
        }
        println!("bwd_in: {:.2} GMAC/s", macs * reps as f64 / t.elapsed().as_secs_f64() / 1e9);

        let mut gw = vec![0.0; wgt.len()];
        let t = std::time::Instant::now();
        for _ in 0..reps {
            conv2d_weight_grad(&x, &g, c_in, c_out, h, w, k, &mut gw);
        }
        println!("bwd_w : {:.2} GMAC/s", macs * reps as f64 / t.elapsed().as_secs_f64() / 1e9);
    }
}
