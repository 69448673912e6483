//! Finite-difference gradient checks shared by the per-module tests and the
//! acceptance run. Each check reports its worst relative error over
//! [`TRIALS`] independent trials; callers compare it against [`TOLERANCE`].

use super::{
    clear_of_kinks, min_gradient, project, random_tensor, randomize_fan_in, uniform_tensor, RESOLUTION, STEP,
    TOLERANCE, TRIALS,
};
use fspnet_core::encoder::TransformerLayer;
use fspnet_core::fsd::{Aim, Fsd, FsdConfig, LateralHead};
use fspnet_core::ops::RunningStats;
use fspnet_core::{
    check_gradient, check_gradients, check_param_gradients, total_loss, Encoder, EncoderConfig, Graph, Mode, NlTem,
    NlTemConfig, ParamStore, Result, SeededRng, Tensor, TokenSequence, Var,
};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub trials: usize,
    pub worst: f64,
}

impl Check {
    fn new(name: &str, worst: f64) -> Self {
        Self {
            name: name.to_string(),
            trials: TRIALS,
            worst,
        }
    }

    pub fn passed(&self) -> bool {
        self.worst < TOLERANCE
    }

    pub fn assert(&self) {
        assert!(self.passed(), "{}: max relative error {:e}", self.name, self.worst);
    }
}

pub fn assert_all(checks: &[Check]) {
    checks.iter().for_each(Check::assert);
}

fn op(
    seed: u64,
    name: &str,
    mut draw: impl FnMut(&mut SeededRng) -> Vec<Tensor<f64>>,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Check {
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let xs = draw(&mut rng);
        let err = check_gradients(
            |g, v| {
                let y = f(g, v)?;
                project(g, y, 1000 + trial as u64)
            },
            &xs,
            STEP,
        )
        .unwrap();
        worst = worst.max(err);
    }
    Check::new(name, worst)
}

fn normal(shape: &'static [usize]) -> impl FnMut(&mut SeededRng) -> Vec<Tensor<f64>> {
    move |rng| vec![random_tensor(shape, rng, 1.0)]
}

fn normal2(a: &'static [usize], b: &'static [usize]) -> impl FnMut(&mut SeededRng) -> Vec<Tensor<f64>> {
    move |rng| vec![random_tensor(a, rng, 1.0), random_tensor(b, rng, 1.0)]
}

pub fn elementwise() -> Vec<Check> {
    vec![
        op(1, "add", normal2(&[3, 4], &[3, 4]), |g, v| g.add(v[0], v[1])),
        op(2, "sub", normal2(&[3, 4], &[3, 4]), |g, v| g.sub(v[0], v[1])),
        op(3, "mul", normal2(&[2, 3, 2], &[2, 3, 2]), |g, v| g.mul(v[0], v[1])),
        op(4, "scale", normal(&[5]), |g, v| Ok(g.scale(v[0], -1.7))),
        op(5, "add_trailing", normal2(&[2, 3, 4], &[3, 4]), |g, v| {
            g.add_trailing(v[0], v[1])
        }),
        op(6, "add_trailing_bias", normal2(&[2, 3, 4], &[4]), |g, v| {
            g.add_trailing(v[0], v[1])
        }),
    ]
}

pub fn matmul_layouts() -> Vec<Check> {
    vec![
        op(10, "matmul_2x2", normal2(&[2, 3], &[3, 4]), |g, v| g.matmul(v[0], v[1])),
        op(11, "matmul_3x2", normal2(&[2, 3, 4], &[4, 5]), |g, v| {
            g.matmul(v[0], v[1])
        }),
        op(12, "matmul_2x3", normal2(&[3, 4], &[2, 4, 2]), |g, v| {
            g.matmul(v[0], v[1])
        }),
        op(13, "matmul_3x3", normal2(&[2, 3, 4], &[2, 4, 3]), |g, v| {
            g.matmul(v[0], v[1])
        }),
    ]
}

pub fn shape_ops() -> Vec<Check> {
    vec![
        op(20, "transpose", normal(&[2, 3, 4]), |g, v| g.transpose(v[0])),
        op(21, "permute", normal(&[2, 3, 4, 2]), |g, v| {
            g.permute(v[0], &[2, 0, 3, 1])
        }),
        op(22, "reshape", normal(&[2, 6]), |g, v| g.reshape(v[0], &[3, 2, 2])),
        op(23, "concat0", normal2(&[2, 5], &[3, 5]), |g, v| {
            g.concat(&[v[0], v[1]], 0)
        }),
        op(24, "concat1", normal2(&[2, 2, 3], &[2, 1, 3]), |g, v| {
            g.concat(&[v[0], v[1]], 1)
        }),
        op(25, "concat_repeat", normal(&[2, 3]), |g, v| g.concat(&[v[0], v[0]], 1)),
        op(26, "slice", normal(&[3, 5, 2]), |g, v| g.slice(v[0], 1, 1, 4)),
    ]
}

pub fn activations() -> Vec<Check> {
    let off_kink = |rng: &mut SeededRng| {
        vec![Tensor::from_fn([4, 5], |_| {
            let z = rng.normal();
            z.signum() * (0.01 + z.abs())
        })]
    };
    vec![
        op(30, "relu", off_kink, |g, v| Ok(g.relu(v[0]))),
        op(31, "sigmoid", normal(&[4, 5]), |g, v| Ok(g.sigmoid(v[0]))),
        op(32, "gelu", normal(&[4, 5]), |g, v| Ok(g.gelu(v[0]))),
        op(33, "softmax_last", normal(&[3, 6]), |g, v| g.softmax_last(v[0])),
        op(34, "softmax_axis0", normal(&[3, 2, 4]), |g, v| g.softmax(v[0], 0)),
        op(35, "softmax_axis1", normal(&[3, 2, 4]), |g, v| g.softmax(v[0], 1)),
    ]
}

pub fn reductions() -> Vec<Check> {
    vec![
        op(40, "sum", normal(&[3, 4]), |g, v| {
            let s = g.sum(v[0]);
            Ok(g.scale(s, 1.3))
        }),
        op(41, "mean", normal(&[3, 4]), |g, v| Ok(g.mean(v[0]))),
    ]
}

pub fn normalization() -> Vec<Check> {
    let layer_norm = op(
        50,
        "layer_norm",
        |rng| {
            vec![
                random_tensor(&[2, 3, 6], rng, 2.0),
                random_tensor(&[6], rng, 1.0),
                random_tensor(&[6], rng, 1.0),
            ]
        },
        |g, v| g.layer_norm(v[0], v[1], v[2]),
    );
    let stats = RunningStats {
        mean: Tensor::from_f64([3], &[0.1, -0.2, 0.3]).unwrap(),
        var: Tensor::from_f64([3], &[1.5, 0.7, 1.1]).unwrap(),
    };
    let draw = |rng: &mut SeededRng| {
        vec![
            random_tensor(&[2, 3, 2, 2], rng, 1.5),
            random_tensor(&[3], rng, 1.0),
            random_tensor(&[3], rng, 1.0),
        ]
    };
    let batch_norm = op(51, "batch_norm_train", draw, |g, v| {
        Ok(g.batch_norm2d(v[0], v[1], v[2], &stats)?.0)
    });
    vec![layer_norm, batch_norm]
}

/// Evaluation-mode batch norm. `check_gradients` builds training graphs, so
/// the central differences are taken by hand.
pub fn batch_norm_eval() -> Check {
    let stats = RunningStats {
        mean: Tensor::from_f64([2], &[0.1, -0.2]).unwrap(),
        var: Tensor::from_f64([2], &[1.5, 0.7]).unwrap(),
    };
    let mut rng = SeededRng::new(53);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let xs = vec![
            random_tensor(&[2, 2, 2, 2], &mut rng, 1.0),
            random_tensor(&[2], &mut rng, 1.0),
            random_tensor(&[2], &mut rng, 1.0),
        ];
        let eval = |inputs: &[Tensor<f64>]| -> f64 {
            let mut g = Graph::new(Mode::Eval);
            let v: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
            let y = g.batch_norm2d(v[0], v[1], v[2], &stats).unwrap().0;
            let s = project(&mut g, y, trial as u64).unwrap();
            g.value(s).data()[0]
        };
        let mut g = Graph::new(Mode::Eval);
        let v: Vec<Var> = xs.iter().map(|t| g.variable(t.clone())).collect();
        let y = g.batch_norm2d(v[0], v[1], v[2], &stats).unwrap().0;
        let s = project(&mut g, y, trial as u64).unwrap();
        let grads = g.backward(s).unwrap();
        for (k, var) in v.iter().enumerate() {
            let analytic = grads.get(*var).unwrap();
            for i in 0..xs[k].numel() {
                let mut probe = xs.clone();
                probe[k].data_mut()[i] += STEP;
                let plus = eval(&probe);
                probe[k].data_mut()[i] -= 2.0 * STEP;
                let minus = eval(&probe);
                let numeric = (plus - minus) / (2.0 * STEP);
                let a = analytic.data()[i];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
            }
        }
    }
    Check::new("batch_norm_eval", worst)
}

pub fn spatial() -> Vec<Check> {
    vec![
        op(
            60,
            "conv1x1",
            |rng| {
                vec![
                    random_tensor(&[2, 3, 3, 4], rng, 1.0),
                    random_tensor(&[2, 3, 1, 1], rng, 1.0),
                    random_tensor(&[2], rng, 1.0),
                ]
            },
            |g, v| g.conv2d(v[0], v[1], Some(v[2])),
        ),
        op(
            61,
            "conv3x3",
            |rng| {
                vec![
                    random_tensor(&[2, 2, 4, 3], rng, 1.0),
                    random_tensor(&[3, 2, 3, 3], rng, 1.0),
                ]
            },
            |g, v| g.conv2d(v[0], v[1], None),
        ),
        op(62, "upsample2x", normal(&[2, 2, 3, 3]), |g, v| g.upsample2x(v[0])),
        op(63, "resize_down", normal(&[1, 2, 7, 5]), |g, v| {
            g.resize_bilinear(v[0], 3, 4)
        }),
        op(64, "resize_odd", normal(&[1, 1, 3, 4]), |g, v| {
            g.resize_bilinear(v[0], 7, 5)
        }),
        op(65, "pool_even", normal(&[2, 8, 3]), |g, v| {
            g.adaptive_avg_pool_seq(v[0], 4)
        }),
        op(66, "pool_uneven", normal(&[2, 7, 3]), |g, v| {
            g.adaptive_avg_pool_seq(v[0], 3)
        }),
    ]
}

pub fn bce() -> Check {
    let mut rng = SeededRng::new(70);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let target = Tensor::from_fn([3, 4], |_| if rng.coin(0.5) { 1.0 } else { 0.0 });
        let x = uniform_tensor(&[3, 4], &mut rng, 0.05, 0.95);
        worst = worst.max(check_gradient(|g, p| g.bce(p, &target), &x, STEP).unwrap());
    }
    Check::new("bce", worst)
}

/// Every primitive the model uses.
pub fn primitives() -> Vec<Check> {
    let mut all = Vec::new();
    all.extend(elementwise());
    all.extend(matmul_layouts());
    all.extend(shape_ops());
    all.extend(activations());
    all.extend(reductions());
    all.extend(normalization());
    all.push(batch_norm_eval());
    all.extend(spatial());
    all.push(bce());
    all
}

/// Largest input and parameter error of `f` at one screened draw.
fn module_error<F>(
    store: &mut ParamStore<f64>,
    rng: &mut SeededRng,
    draw: impl Fn(&mut SeededRng) -> Vec<Tensor<f64>>,
    f: F,
) -> f64
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let xs = loop {
        randomize_fan_in(store, rng, 1.0);
        let xs = draw(rng);
        let clear = clear_of_kinks(|g| {
            let v: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
            f(g, store, &v)
        });
        if clear && min_gradient(&f, store, &xs) >= RESOLUTION {
            break xs;
        }
    };
    let store = &*store;
    let inputs = check_gradients(|g, v| f(g, store, v), &xs, STEP).unwrap();
    let params = check_param_gradients(
        |g, ps| {
            let v: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
            f(g, ps, &v)
        },
        store,
        STEP,
    )
    .unwrap();
    inputs.max(params)
}

fn toy_encoder(layers: usize) -> EncoderConfig {
    EncoderConfig {
        image_c: 3,
        image_h: 8,
        image_w: 8,
        patch_size: 4,
        embed_dim: 8,
        num_layers: layers,
        num_heads: 2,
        mlp_ratio: 2.0,
        final_norm: false,
    }
}

pub fn transformer_layer() -> Check {
    let cfg = toy_encoder(1);
    let mut rng = SeededRng::new(9);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut store = ParamStore::new();
        let layer = TransformerLayer::new(&mut store, "l", &cfg, &mut rng).unwrap();
        randomize_fan_in(&mut store, &mut rng, 1.0);
        let x = random_tensor(&[2, 4, 8], &mut rng, 1.0);
        let f = |g: &mut Graph<f64>, ps: &ParamStore<f64>, x| {
            let (y, _) = layer.forward(
                g,
                ps,
                &TokenSequence {
                    tokens: x,
                    grid_h: 2,
                    grid_w: 2,
                },
            )?;
            project(g, y.tokens, trial as u64)
        };
        worst = worst.max(check_gradients(|g, v| f(g, &store, v[0]), std::slice::from_ref(&x), STEP).unwrap());
        worst = worst.max(
            check_param_gradients(
                |g, ps| {
                    let x = g.constant(x.clone());
                    f(g, ps, x)
                },
                &store,
                STEP,
            )
            .unwrap(),
        );
    }
    Check::new("transformer_layer", worst)
}

/// Parameter gradients through patch embedding, positions and two layers.
pub fn two_layer_encoder() -> Check {
    let cfg = toy_encoder(2);
    let mut rng = SeededRng::new(10);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", &cfg, &mut rng).unwrap();
        randomize_fan_in(&mut store, &mut rng, 1.0);
        let image = Tensor::from_fn([1, 3, 8, 8], |_| rng.uniform());
        let err = check_param_gradients(
            |g, ps| {
                let out = enc.encode(g, ps, &image)?;
                project(g, out.layers[1].tokens, trial as u64)
            },
            &store,
            STEP,
        )
        .unwrap();
        worst = worst.max(err);
    }
    Check::new("two_layer_encoder", worst)
}

/// The whole NL-TEM pair on a 4×4 token grid with width 8 and
/// `n_vertices` graph vertices.
pub fn nl_tem(n_vertices: usize) -> Check {
    const L: usize = 16;
    const C: usize = 8;
    let config = NlTemConfig {
        embed_dim: C,
        n_vertices,
        share_branches: false,
    };
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut rng = SeededRng::new(100 + 1000 * n_vertices as u64 + trial as u64);
        let mut store = ParamStore::new();
        let tem = NlTem::new(&mut store, "tem", &config, &mut rng).unwrap();
        let err = module_error(
            &mut store,
            &mut rng,
            |rng| vec![random_tensor(&[1, L, C], rng, 1.0), random_tensor(&[1, L, C], rng, 1.0)],
            |g, ps, v| {
                let s1 = TokenSequence {
                    tokens: v[0],
                    grid_h: 4,
                    grid_w: 4,
                };
                let s2 = TokenSequence {
                    tokens: v[1],
                    grid_h: 4,
                    grid_w: 4,
                };
                let (o1, o2) = tem.forward(g, ps, &s1, &s2)?;
                let both = g.concat(&[o1.feature, o2.feature], 1)?;
                project(g, both, trial as u64)
            },
        );
        worst = worst.max(err);
    }
    Check::new(&format!("nl_tem_nv{n_vertices}"), worst)
}

pub fn aim() -> Check {
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut rng = SeededRng::new(200 + trial as u64);
        let mut store = ParamStore::<f64>::new();
        let aim = Aim::new(&mut store, "aim", 3, true, &mut rng).unwrap();
        let draw = |rng: &mut SeededRng| (0..3).map(|_| random_tensor(&[2, 3, 3, 3], rng, 1.0)).collect();
        let err = module_error(&mut store, &mut rng, draw, |g, ps, v| {
            let (fp, fo) = aim.forward(g, ps, Some(v[0]), v[1], v[2])?;
            let a = project(g, fp, trial as u64)?;
            let b = project(g, fo, trial as u64 + 1)?;
            g.add(a, b)
        });
        worst = worst.max(err);
    }
    Check::new("aim", worst)
}

pub fn lateral_head() -> Check {
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut rng = SeededRng::new(300 + trial as u64);
        let mut store = ParamStore::<f64>::new();
        let head = LateralHead::new(&mut store, "head", 3, &mut rng).unwrap();
        let draw = |rng: &mut SeededRng| vec![random_tensor(&[2, 3, 3, 4], rng, 1.0)];
        let err = module_error(&mut store, &mut rng, draw, |g, ps, v| {
            let p = head.forward(g, ps, v[0], 7, 5)?;
            project(g, p.probability, trial as u64)
        });
        worst = worst.max(err);
    }
    Check::new("lateral_head", worst)
}

/// The full twelve-input decode on a 2×2 grid, all four laterals.
pub fn decode() -> Check {
    let cfg = FsdConfig {
        in_channels: 3,
        width: 2,
    };
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut rng = SeededRng::new(400 + trial as u64);
        let mut store = ParamStore::<f64>::new();
        let fsd = Fsd::new(&mut store, "fsd", &cfg, &mut rng).unwrap();
        let draw = |rng: &mut SeededRng| (0..12).map(|_| random_tensor(&[1, 3, 2, 2], rng, 1.0)).collect();
        let err = module_error(&mut store, &mut rng, draw, |g, ps, v| {
            let out = fsd.decode(g, ps, v, 8, 8)?;
            let mut total = project(g, out.predictions[0].probability, trial as u64)?;
            for (i, p) in out.predictions.iter().enumerate().skip(1) {
                let t = project(g, p.probability, trial as u64 + i as u64)?;
                total = g.add(total, t)?;
            }
            Ok(total)
        });
        worst = worst.max(err);
    }
    Check::new("decode", worst)
}

/// The weighted four-term loss with respect to every prediction.
pub fn weighted_loss() -> Check {
    let mut rng = SeededRng::new(4);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let gt = Tensor::from_fn([2, 1, 3, 3], |_| if rng.coin(0.4) { 1.0 } else { 0.0 });
        let xs: Vec<_> = (0..4)
            .map(|_| uniform_tensor(&[2, 1, 3, 3], &mut rng, 0.02, 0.98))
            .collect();
        worst = worst.max(check_gradients(|g, v| total_loss(g, v, &gt), &xs, STEP).unwrap());
    }
    Check::new("total_loss", worst)
}
