use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn dense(input: usize, output: usize, activation: Activation) -> LayerSpec {
    LayerSpec::Dense {
        input,
        output,
        activation,
    }
}

fn recurrent_spec() -> NetworkSpec {
    NetworkSpec {
        input_width: 3,
        input_len: None,
        aux_width: 2,
        layers: vec![
            LayerSpec::Lstm {
                input: 3,
                hidden: 4,
            },
            LayerSpec::Concat { aux_width: 2 },
            dense(6, 5, Activation::Tanh),
            dense(5, 2, Activation::Identity),
        ],
    }
}

fn conv_spec() -> NetworkSpec {
    NetworkSpec {
        input_width: 3,
        input_len: Some(9),
        aux_width: 1,
        layers: vec![
            LayerSpec::Conv1d {
                in_channels: 3,
                filters: 4,
                kernel: 2,
                activation: Activation::Tanh,
            },
            LayerSpec::MaxPool1d { pool: 2 },
            LayerSpec::Flatten,
            LayerSpec::Concat { aux_width: 1 },
            dense(17, 3, Activation::Sigmoid),
        ],
    }
}

/// Straightforward re-implementation used as an oracle for the forward pass.
mod naive {
    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        (0..rows)
            .map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum())
            .collect()
    }

    /// Gate order i, f, g, o.
    pub fn lstm(p: &[f64], n_in: usize, h: usize, xs: &[Vec<f64>]) -> (Vec<f64>, usize) {
        let w = &p[..4 * h * n_in];
        let u = &p[4 * h * n_in..4 * h * n_in + 4 * h * h];
        let b = &p[4 * h * n_in + 4 * h * h..4 * h * n_in + 4 * h * h + 4 * h];
        let mut hid = vec![0.0; h];
        let mut cell = vec![0.0; h];
        for x in xs {
            let wx = matvec(w, 4 * h, n_in, x);
            let uh = matvec(u, 4 * h, h, &hid);
            let z: Vec<f64> = (0..4 * h).map(|k| wx[k] + uh[k] + b[k]).collect();
            for k in 0..h {
                let i = sig(z[k]);
                let f = sig(z[h + k]);
                let g = z[2 * h + k].tanh();
                let o = sig(z[3 * h + k]);
                cell[k] = f * cell[k] + i * g;
                hid[k] = o * cell[k].tanh();
            }
        }
        (hid, 4 * h * n_in + 4 * h * h + 4 * h)
    }

    pub fn dense(
        p: &[f64],
        n_in: usize,
        n_out: usize,
        x: &[f64],
        act: fn(f64) -> f64,
    ) -> (Vec<f64>, usize) {
        let y = matvec(&p[..n_in * n_out], n_out, n_in, x)
            .into_iter()
            .zip(&p[n_in * n_out..n_in * n_out + n_out])
            .map(|(v, b)| act(v + b))
            .collect();
        (y, n_in * n_out + n_out)
    }

    pub fn sigmoid(x: f64) -> f64 {
        sig(x)
    }
}

#[test]
fn zero_network_outputs_zero() {
    for spec in [recurrent_spec(), conv_spec()] {
        let net = Network::zeros(spec.clone()).unwrap();
        let mut r = rng(1);
        let len = spec.input_len.unwrap_or(4);
        let out = net
            .predict(
                &random_matrix(&mut r, len, 3),
                &random_vec(&mut r, spec.aux_width),
            )
            .unwrap();
        // The conv net ends in a sigmoid, which maps zero to one half.
        let expected = if spec.input_len.is_some() { 0.5 } else { 0.0 };
        assert!(out.iter().all(|&v| v == expected), "{out:?}");
    }
}

#[test]
fn identity_dense_passes_input_through() {
    let spec = NetworkSpec {
        input_width: 2,
        input_len: Some(1),
        aux_width: 0,
        layers: vec![LayerSpec::Flatten, dense(2, 2, Activation::Identity)],
    };
    let net = Network::from_params(spec, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let x = Tensor::new(vec![1, 2], vec![0.3, -7.0]).unwrap();
    assert_eq!(net.predict(&x, &[]).unwrap(), vec![0.3, -7.0]);
}

#[test]
fn recurrent_forward_matches_naive() {
    let mut r = rng(7);
    let net = Network::new(recurrent_spec(), &mut r).unwrap();
    let p = net.params();
    for steps in [0usize, 1, 5] {
        let rows: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(&mut r, 3)).collect();
        let aux = random_vec(&mut r, 2);
        let (h, used) = naive::lstm(p, 3, 4, &rows);
        let mut x = h;
        x.extend_from_slice(&aux);
        let (x, u2) = naive::dense(&p[used..], 6, 5, &x, f64::tanh);
        let (y, _) = naive::dense(&p[used + u2..], 5, 2, &x, |v| v);

        let out = net
            .predict(&Tensor::from_rows(&rows, 3).unwrap(), &aux)
            .unwrap();
        for (a, b) in out.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn conv_forward_matches_naive() {
    let mut r = rng(8);
    let net = Network::new(conv_spec(), &mut r).unwrap();
    let p = net.params();
    let x = random_matrix(&mut r, 9, 3);
    let aux = random_vec(&mut r, 1);
    // conv: out[t][f] = tanh(b_f + sum_j sum_c w[f][j][c] x[t+j][c])
    let (w, b) = (&p[..4 * 2 * 3], &p[24..28]);
    let xd = x.data();
    let conv: Vec<Vec<f64>> = (0..8)
        .map(|t| {
            (0..4)
                .map(|f| {
                    let mut s = b[f];
                    for j in 0..2 {
                        for c in 0..3 {
                            s += w[f * 6 + j * 3 + c] * xd[(t + j) * 3 + c];
                        }
                    }
                    s.tanh()
                })
                .collect()
        })
        .collect();
    let mut flat: Vec<f64> = (0..4)
        .flat_map(|t| {
            let conv = &conv;
            (0..4).map(move |f| conv[2 * t][f].max(conv[2 * t + 1][f]))
        })
        .collect();
    flat.extend_from_slice(&aux);
    let (y, _) = naive::dense(&p[28..], 17, 3, &flat, naive::sigmoid);
    let out = net.predict(&x, &aux).unwrap();
    for (a, b) in out.iter().zip(&y) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn gradient_checks_every_layer_type() {
    let mut r = rng(11);
    let relu_head = NetworkSpec {
        input_width: 4,
        input_len: Some(2),
        aux_width: 0,
        layers: vec![
            LayerSpec::Flatten,
            dense(8, 6, Activation::Relu),
            dense(6, 3, Activation::Identity),
        ],
    };
    for spec in [recurrent_spec(), conv_spec(), relu_head] {
        let net = Network::new(spec.clone(), &mut r).unwrap();
        let len = spec.input_len.unwrap_or(6);
        let x = random_matrix(&mut r, len, spec.input_width);
        let aux = random_vec(&mut r, spec.aux_width);
        let w = random_vec(&mut r, spec.output_width().unwrap());
        let report = check_gradients(&net, &x, &aux, &w, 1e-5).unwrap();
        assert_eq!(report.checked, net.param_count());
        assert!(report.max_relative_error < 1e-4, "{spec:?}: {report:?}");
    }
}

#[test]
fn dense_gradient_is_outer_product() {
    let spec = NetworkSpec {
        input_width: 3,
        input_len: Some(1),
        aux_width: 0,
        layers: vec![LayerSpec::Flatten, dense(3, 2, Activation::Identity)],
    };
    let mut r = rng(3);
    let net = Network::new(spec, &mut r).unwrap();
    let x = vec![0.5, -1.5, 2.0];
    let dy = vec![3.0, -0.25];
    let (_, cache) = net
        .forward(&Tensor::new(vec![1, 3], x.clone()).unwrap(), &[])
        .unwrap();
    let mut g = vec![0.0; net.param_count()];
    net.backward(&cache, &dy, &mut g).unwrap();
    for o in 0..2 {
        for i in 0..3 {
            assert_eq!(g[o * 3 + i], dy[o] * x[i]);
        }
        assert_eq!(g[6 + o], dy[o]);
    }
}

#[test]
fn single_step_lstm_gradient_closed_form() {
    let (n_in, h) = (2usize, 3usize);
    let spec = NetworkSpec {
        input_width: n_in,
        input_len: None,
        aux_width: 0,
        layers: vec![LayerSpec::Lstm {
            input: n_in,
            hidden: h,
        }],
    };
    let mut r = rng(5);
    let net = Network::new(spec, &mut r).unwrap();
    let p = net.params().to_vec();
    let x = random_vec(&mut r, n_in);
    let gh = random_vec(&mut r, h);

    // With h0 = c0 = 0: z = W x + b, c = i*g, h = o*tanh(c).
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let b_off = 4 * h * n_in + 4 * h * h;
    let z: Vec<f64> = (0..4 * h)
        .map(|k| p[b_off + k] + (0..n_in).map(|c| p[k * n_in + c] * x[c]).sum::<f64>())
        .collect();
    let mut dz = vec![0.0; 4 * h];
    for k in 0..h {
        let (i, g, o) = (sig(z[k]), z[2 * h + k].tanh(), sig(z[3 * h + k]));
        let c = i * g;
        let dc = gh[k] * o * (1.0 - c.tanh().powi(2));
        dz[k] = dc * g * i * (1.0 - i);
        dz[h + k] = 0.0;
        dz[2 * h + k] = dc * i * (1.0 - g * g);
        dz[3 * h + k] = gh[k] * c.tanh() * o * (1.0 - o);
    }

    let (_, cache) = net
        .forward(&Tensor::new(vec![1, n_in], x.clone()).unwrap(), &[])
        .unwrap();
    let mut grads = vec![0.0; net.param_count()];
    net.backward(&cache, &gh, &mut grads).unwrap();
    for k in 0..4 * h {
        for c in 0..n_in {
            assert!((grads[k * n_in + c] - dz[k] * x[c]).abs() < 1e-14);
        }
        assert!((grads[b_off + k] - dz[k]).abs() < 1e-14);
    }
    // recurrent weights see only the zero initial state
    assert!(grads[4 * h * n_in..b_off].iter().all(|&g| g == 0.0));
}

#[test]
fn stale_cache_is_rejected() {
    let mut r = rng(2);
    let mut net = Network::new(recurrent_spec(), &mut r).unwrap();
    let (out, cache) = net
        .forward(&random_matrix(&mut r, 2, 3), &[0.0, 1.0])
        .unwrap();
    net.params_mut()[0] += 0.1;
    let mut g = vec![0.0; net.param_count()];
    assert!(matches!(
        net.backward(&cache, &vec![1.0; out.len()], &mut g),
        Err(NeuralError::StaleCache)
    ));
}

#[test]
fn shape_errors_are_descriptive() {
    let mut r = rng(2);
    let net = Network::new(conv_spec(), &mut r).unwrap();
    let err = net
        .predict(&random_matrix(&mut r, 5, 3), &[0.0])
        .unwrap_err();
    assert!(err.to_string().contains("expects exactly 9"), "{err}");
    let err = net
        .predict(&random_matrix(&mut r, 9, 2), &[0.0])
        .unwrap_err();
    assert!(err.to_string().contains("width 2"), "{err}");
    let err = net.predict(&random_matrix(&mut r, 9, 3), &[]).unwrap_err();
    assert!(err.to_string().contains("aux"), "{err}");

    let bad = NetworkSpec {
        layers: vec![dense(3, 2, Activation::Relu)],
        ..recurrent_spec()
    };
    assert!(Network::zeros(bad).is_err());
}

#[test]
fn clipping_caps_the_norm() {
    let mut g = vec![3.0, 4.0];
    assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
    assert_eq!(g, vec![3.0, 4.0]);
    clip_global_norm(&mut g, 1.0);
    assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
}

mod checkpoints {
    use super::*;
    use std::path::Path;

    fn trained() -> Checkpoint {
        let mut r = rng(9);
        let mut net = Network::new(recurrent_spec(), &mut r).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), net.param_count());
        let grads = random_vec(&mut r, net.param_count());
        adam.step(&mut net, &grads).unwrap();
        Checkpoint {
            network: net,
            adam: Some(adam),
            meta: CheckpointMeta {
                episodes: 12,
                gradient_steps: 1,
                rng: None,
                extra: serde_json::json!({"arch": "test"}),
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ckpt = trained();
        ckpt.save(&path, Precision::F64).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.network.params(), ckpt.network.params());
        assert_eq!(back.adam, ckpt.adam);
        assert_eq!(back.meta, ckpt.meta);
        let x = random_matrix(&mut rng(4), 3, 3);
        assert_eq!(
            back.network.predict(&x, &[0.5, 0.5]).unwrap(),
            ckpt.network.predict(&x, &[0.5, 0.5]).unwrap()
        );
        assert_eq!(&std::fs::read(&path).unwrap()[..8], b"GTCKPT1\n");
    }

    #[test]
    fn single_precision_rounds_to_f32() {
        let ckpt = trained();
        let bytes = ckpt.to_bytes(Precision::F32).unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        for (a, b) in back.network.params().iter().zip(ckpt.network.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn truncated_file_is_an_error() {
        let bytes = trained().to_bytes(Precision::F64).unwrap();
        for cut in [4, 20, bytes.len() - 3] {
            let err = Checkpoint::from_bytes(&bytes[..cut], Path::new("t.ckpt")).unwrap_err();
            assert!(matches!(err, NeuralError::Checkpoint { .. }), "{err}");
            assert!(err.to_string().contains("truncated"), "{err}");
        }
    }

    #[test]
    fn spec_mismatch_refuses_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lstm.ckpt");
        trained().save(&path, Precision::F64).unwrap();
        let err = Checkpoint::load_expecting(&path, &conv_spec()).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
    }

    #[test]
    fn tampered_version_is_refused() {
        let mut bytes = trained().to_bytes(Precision::F64).unwrap();
        let needle = b"\"format\":1";
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        bytes[at + 9] = b'7';
        let err = Checkpoint::from_bytes(&bytes, Path::new("v.ckpt")).unwrap_err();
        assert!(err.to_string().contains("format version"), "{err}");
    }
}
