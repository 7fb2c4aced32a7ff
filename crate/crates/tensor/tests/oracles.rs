//! Independent oracles for the tensor kernels: window scans, direct
//! summation and central differences.

use atms_tensor::conv::{conv2d_forward, ConvGeometry};
use atms_tensor::pool::{maxpool2d_forward, PoolGeometry};
use atms_tensor::softmax::{entropy_rows, softmax_rows};
use atms_tensor::{finite_diff_check, BatchNormConfig, BatchNormState, Mode, Tape, Tensor, TensorError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn conv_scan(g: &ConvGeometry, x: &[f64], w: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for n in 0..g.batch {
        for o in 0..g.out_channels {
            for oh in 0..g.out_height {
                for ow in 0..g.out_width {
                    let mut acc = 0.0;
                    for c in 0..g.in_channels {
                        for ki in 0..g.kernel {
                            for kj in 0..g.kernel {
                                let ih = (oh * g.stride + ki) as isize - g.padding as isize;
                                let iw = (ow * g.stride + kj) as isize - g.padding as isize;
                                if ih >= 0 && iw >= 0 && (ih as usize) < g.height && (iw as usize) < g.width {
                                    acc += x[((n * g.in_channels + c) * g.height + ih as usize) * g.width + iw as usize]
                                        * w[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn max_scan(x: &[f64], n: usize, c: usize, h: usize, w: usize, k: usize, s: usize) -> Vec<f64> {
    let (oh_n, ow_n) = ((h - k) / s + 1, (w - k) / s + 1);
    let mut out = Vec::new();
    for plane in 0..n * c {
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                let mut m = f64::NEG_INFINITY;
                for i in 0..k {
                    for j in 0..k {
                        m = m.max(x[plane * h * w + (oh * s + i) * w + ow * s + j]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

#[test]
fn conv_and_pool_match_window_scans_on_all_small_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 1..=2 {
        for c in 1..=3 {
            for h in 1..=9 {
                for w in 1..=9 {
                    let x = random_tensor(&mut rng, &[n, c, h, w]);
                    for k in [1, 2, 3] {
                        for stride in [1, 2] {
                            for padding in [0, 1] {
                                if let Ok(g) = ConvGeometry::new(&[n, c, h, w], &[2, c, k, k], stride, padding) {
                                    let wt = random_tensor(&mut rng, &[2, c, k, k]);
                                    let fast = conv2d_forward(&g, x.data(), wt.data(), None);
                                    let slow = conv_scan(&g, x.data(), wt.data());
                                    for (a, b) in fast.iter().zip(&slow) {
                                        assert!((a - b).abs() < 1e-12, "conv {n}x{c}x{h}x{w} k{k} s{stride} p{padding}");
                                    }
                                }
                            }
                            if k <= h && k <= w {
                                let g = PoolGeometry::new(&[n, c, h, w], k, stride, 0).unwrap();
                                let (fast, _) = maxpool2d_forward(&g, x.data());
                                assert_eq!(fast, max_scan(x.data(), n, c, h, w, k, stride));
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn random_8x8_pool_matches_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(&mut rng, &[1, 1, 8, 8]);
    let mut tape = Tape::no_grad();
    let v = tape.constant(x.clone());
    let y = tape.maxpool2d(v, 2, 2, 0).unwrap();
    assert_eq!(tape.value(y).data(), max_scan(x.data(), 1, 1, 8, 8, 2, 2).as_slice());
}

#[test]
fn window_larger_than_input_is_dimension_error() {
    let mut tape = Tape::<f64>::no_grad();
    let v = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(matches!(tape.maxpool2d(v, 3, 1, 0), Err(TensorError::Dimension { .. })));
}

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn gradcheck_conv_with_bias_stride_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[2, 3, 5, 5]);
    let w = random_tensor(&mut rng, &[4, 3, 3, 3]);
    let b = random_tensor(&mut rng, &[4]);
    let wrt_x = |t: &mut Tape<f64>, v| {
        let wv = t.constant(w.clone());
        let bv = t.constant(b.clone());
        let y = t.conv2d(v, wv, Some(bv), 2, 1)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    };
    assert!(finite_diff_check(wrt_x, &x, H).unwrap() < TOL);
    let wrt_w = |t: &mut Tape<f64>, v| {
        let xv = t.constant(x.clone());
        let bv = t.constant(b.clone());
        let y = t.conv2d(xv, v, Some(bv), 1, 1)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    };
    assert!(finite_diff_check(wrt_w, &w, H).unwrap() < TOL);
    let wrt_b = |t: &mut Tape<f64>, v| {
        let xv = t.constant(x.clone());
        let wv = t.constant(w.clone());
        let y = t.conv2d(xv, wv, Some(v), 1, 0)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    };
    assert!(finite_diff_check(wrt_b, &b, H).unwrap() < TOL);
}

#[test]
fn gradcheck_pooling_relu_and_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&mut rng, &[2, 2, 6, 6]);
    let pool = |t: &mut Tape<f64>, v| {
        let m = t.maxpool2d(v, 3, 2, 1)?;
        let r = t.relu(m)?;
        let g = t.global_avg_pool(r)?;
        let flat = t.reshape(g, &[2, 2])?;
        let sq = t.mul(flat, flat)?;
        t.sum(sq)
    };
    assert!(finite_diff_check(pool, &x, H).unwrap() < TOL);

    let inp = random_tensor(&mut rng, &[3, 4]);
    let lw = random_tensor(&mut rng, &[4, 5]);
    let lb = random_tensor(&mut rng, &[5]);
    let lin_w = |t: &mut Tape<f64>, v| {
        let xv = t.constant(inp.clone());
        let bv = t.constant(lb.clone());
        let y = t.linear(xv, v, Some(bv))?;
        let sq = t.mul(y, y)?;
        t.mean(sq)
    };
    assert!(finite_diff_check(lin_w, &lw, H).unwrap() < TOL);
    let lin_x = |t: &mut Tape<f64>, v| {
        let wv = t.constant(lw.clone());
        let bv = t.constant(lb.clone());
        let y = t.linear(v, wv, Some(bv))?;
        let sq = t.mul(y, y)?;
        t.mean(sq)
    };
    assert!(finite_diff_check(lin_x, &inp, H).unwrap() < TOL);
}

#[test]
fn gradcheck_batchnorm_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, &[3, 2, 3, 3]);
    let gamma = Tensor::new(&[2], vec![1.3, 0.7]).unwrap();
    let beta = Tensor::new(&[2], vec![0.1, -0.4]).unwrap();
    let mix = random_tensor(&mut rng, &[3, 2, 3, 3]);
    let fresh = BatchNormState::new(2);
    for mode in [Mode::Train, Mode::Eval] {
        let state = if mode == Mode::Eval {
            BatchNormState {
                running_mean: Tensor::new(&[2], vec![0.2, -0.1]).unwrap(),
                running_var: Tensor::new(&[2], vec![0.8, 1.7]).unwrap(),
                tracked: 3,
            }
        } else {
            fresh.clone()
        };
        let f = |t: &mut Tape<f64>, v| {
            let g = t.constant(gamma.clone());
            let b = t.constant(beta.clone());
            let (y, _) = t.batchnorm2d(v, g, b, &state, mode, BatchNormConfig::default())?;
            let m = t.constant(mix.clone());
            let p = t.mul(y, m)?;
            let sq = t.mul(p, p)?;
            t.sum(sq)
        };
        assert!(finite_diff_check(f, &x, H).unwrap() < TOL, "{mode:?}");
        let wrt_gamma = |t: &mut Tape<f64>, v| {
            let xv = t.constant(x.clone());
            let b = t.constant(beta.clone());
            let (y, _) = t.batchnorm2d(xv, v, b, &state, mode, BatchNormConfig::default())?;
            let m = t.constant(mix.clone());
            let p = t.mul(y, m)?;
            t.sum(p)
        };
        assert!(finite_diff_check(wrt_gamma, &gamma, H).unwrap() < TOL);
    }
}

#[test]
fn gradcheck_softmax_family_and_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = random_tensor(&mut rng, &[3, 4]).map(|v| 3.0 * v);
    let probe = random_tensor(&mut rng, &[3, 4]);
    let target = Tensor::new(&[3, 4], vec![0.3, 0.7, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.5]).unwrap();
    for tau in [0.5, 1.0, 4.0] {
        let sm = |t: &mut Tape<f64>, v| {
            let p = t.softmax_temp(v, tau)?;
            let q = t.constant(probe.clone());
            let y = t.mul(p, q)?;
            t.sum(y)
        };
        assert!(finite_diff_check(sm, &z, H).unwrap() < TOL);
        let teacher = Tensor::new(&[3, 4], softmax_rows(probe.data(), 4, tau)).unwrap();
        let kd = |t: &mut Tape<f64>, v| {
            let lp = t.log_softmax_temp(v, tau)?;
            let kl = t.kl_div(lp, &teacher)?;
            t.scale(kl, tau * tau)
        };
        assert!(finite_diff_check(kd, &z, H).unwrap() < TOL);
    }
    for eps in [0.0, 0.1] {
        let ce = |t: &mut Tape<f64>, v| t.cross_entropy(v, &target, eps);
        assert!(finite_diff_check(ce, &z, H).unwrap() < TOL);
    }
}

#[test]
fn gradcheck_dropout_with_fixed_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, &[2, 4, 2, 2]);
    let f = |t: &mut Tape<f64>, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(99);
        let y = t.dropout_spatial(v, 0.3, Mode::Train, &mut mask_rng)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    };
    assert!(finite_diff_check(f, &x, H).unwrap() < TOL);
}

#[test]
fn gradcheck_full_residual_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&mut rng, &[2, 4, 6, 6]);
    let w1 = random_tensor(&mut rng, &[4, 4, 1, 1]);
    let w2 = random_tensor(&mut rng, &[4, 4, 3, 3]);
    let w3 = random_tensor(&mut rng, &[8, 4, 1, 1]);
    let ws = random_tensor(&mut rng, &[8, 4, 1, 1]);
    let block = |t: &mut Tape<f64>, v| {
        let bn = |t: &mut Tape<f64>, y, c: usize| {
            let g = t.constant(Tensor::ones(&[c]));
            let b = t.constant(Tensor::zeros(&[c]));
            t.batchnorm2d(y, g, b, &BatchNormState::new(c), Mode::Train, BatchNormConfig::default())
                .map(|(o, _)| o)
        };
        let a = t.constant(w1.clone());
        let y = t.conv2d(v, a, None, 1, 0)?;
        let y = bn(t, y, 4)?;
        let y = t.relu(y)?;
        let a = t.constant(w2.clone());
        let y = t.conv2d(y, a, None, 2, 1)?;
        let y = bn(t, y, 4)?;
        let y = t.relu(y)?;
        let a = t.constant(w3.clone());
        let y = t.conv2d(y, a, None, 1, 0)?;
        let y = bn(t, y, 8)?;
        let a = t.constant(ws.clone());
        let s = t.conv2d(v, a, None, 2, 0)?;
        let s = bn(t, s, 8)?;
        let y = t.add(y, s)?;
        let y = t.relu(y)?;
        let g = t.global_avg_pool(y)?;
        let sq = t.mul(g, g)?;
        t.sum(sq)
    };
    assert!(finite_diff_check(block, &x, H).unwrap() < TOL);
}

#[test]
fn step_outside_range_rejected() {
    let x = Tensor::<f64>::ones(&[2]);
    let f = |t: &mut Tape<f64>, v| t.sum(v);
    assert!(finite_diff_check(f, &x, 1e-2).is_err());
    assert!(finite_diff_check(f, &x, 1e-8).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_normalised_and_entropy_monotone(logits in prop::collection::vec(-20.0f64..20.0, 2..6)) {
        let c = logits.len();
        let mut prev = f64::NEG_INFINITY;
        for tau in [0.5, 1.0, 3.0, 6.0, 10.0] {
            let p = softmax_rows(&logits, c, tau);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let h = entropy_rows(&p, c)[0];
            prop_assert!(h >= prev - 1e-12);
            prev = h;
        }
    }

    #[test]
    fn kl_non_negative(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6)) {
        let mut tape = Tape::<f64>::no_grad();
        let zs = tape.constant(Tensor::new(&[2, 3], a).unwrap());
        let lp = tape.log_softmax_temp(zs, 1.0).unwrap();
        let teacher = Tensor::new(&[2, 3], softmax_rows(&b, 3, 1.0)).unwrap();
        let kl = tape.kl_div(lp, &teacher).unwrap();
        prop_assert!(tape.value(kl).item() >= -1e-15);
    }

    #[test]
    fn kl_matches_direct_summation(a in prop::collection::vec(-5.0f64..5.0, 8), b in prop::collection::vec(-5.0f64..5.0, 8)) {
        let mut tape = Tape::<f64>::no_grad();
        let zs = tape.constant(Tensor::new(&[2, 4], a.clone()).unwrap());
        let lp = tape.log_softmax_temp(zs, 1.0).unwrap();
        let pt = softmax_rows(&b, 4, 1.0);
        let kl = tape.kl_div(lp, &Tensor::new(&[2, 4], pt.clone()).unwrap()).unwrap();
        let mut direct = 0.0;
        for r in 0..2 {
            let row = &a[r * 4..r * 4 + 4];
            let norm: f64 = row.iter().map(|v| v.exp()).sum();
            for c in 0..4 {
                let q = row[c].exp() / norm;
                let p = pt[r * 4 + c];
                direct += p * (p / q).ln();
            }
        }
        prop_assert!((tape.value(kl).item() - direct / 2.0).abs() < 1e-10);
    }

    #[test]
    fn mixed_target_cross_entropy_is_linear(z in prop::collection::vec(-4.0f64..4.0, 3), lam in 0.0f64..1.0) {
        let ya = Tensor::new(&[1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let yb = Tensor::new(&[1, 3], vec![0.0, 0.0, 1.0]).unwrap();
        let mixed = Tensor::new(&[1, 3], vec![lam, 0.0, 1.0 - lam]).unwrap();
        let mut tape = Tape::<f64>::no_grad();
        let zv = tape.constant(Tensor::new(&[1, 3], z).unwrap());
        let ce_mix = tape.cross_entropy(zv, &mixed, 0.0).unwrap();
        let ce_a = tape.cross_entropy(zv, &ya, 0.0).unwrap();
        let ce_b = tape.cross_entropy(zv, &yb, 0.0).unwrap();
        let combo = lam * tape.value(ce_a).item() + (1.0 - lam) * tape.value(ce_b).item();
        prop_assert!((tape.value(ce_mix).item() - combo).abs() < 1e-12);
    }
}
