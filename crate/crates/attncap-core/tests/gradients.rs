//! Analytic gradients versus central finite differences, op by op and through
//! the whole decoder step.

use attncap_core::gradcheck::grad_check;
use attncap_core::model::{CaptionModel, ModelDims};
use attncap_core::train::cross_entropy_loss;
use attncap_core::vocab::{END, START};
use attncap_core::{Tape, Tensor};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_param(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::param(shape.to_vec(), data).unwrap()
}

/// Random-point gradient check for one op, several times over.
fn check_op<F>(name: &str, shapes: &[&[usize]], scale: f64, build: F)
where
    F: Fn(&Tape, &[Tensor]) -> attncap_core::Result<Tensor>,
{
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ trial);
        let params: Vec<Tensor> = shapes
            .iter()
            .map(|s| random_param(s, scale, &mut rng))
            .collect();
        let p = params.clone();
        let err = grad_check(
            |tape| {
                let out = build(tape, &p)?;
                // Squash then sum so every output entry matters.
                let squashed = tape.tanh(&out);
                Ok(tape.sum(&squashed))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{name} trial {trial}: max rel error {err}");
    }
}

#[test]
fn elementwise_ops_match_finite_differences() {
    check_op("add", &[&[2, 3], &[2, 3]], 1.5, |t, p| t.add(&p[0], &p[1]));
    check_op("sub", &[&[2, 3], &[2, 3]], 1.5, |t, p| t.sub(&p[0], &p[1]));
    check_op("mul", &[&[2, 3], &[2, 3]], 1.5, |t, p| t.mul(&p[0], &p[1]));
    check_op("affine", &[&[4]], 2.0, |t, p| Ok(t.affine(&p[0], -1.7, 0.3)));
    check_op("tanh", &[&[5]], 2.0, |t, p| Ok(t.tanh(&p[0])));
    check_op("sigmoid", &[&[5]], 2.0, |t, p| Ok(t.sigmoid(&p[0])));
    check_op("exp", &[&[5]], 1.0, |t, p| Ok(t.exp(&p[0])));
}

#[test]
fn log_matches_finite_differences_on_its_domain() {
    // Positive inputs only: shift into [0.5, 2.5].
    check_op("log", &[&[5]], 1.0, |t, p| {
        let shifted = t.affine(&p[0], 1.0, 1.5);
        t.log(&shifted)
    });
}

#[test]
fn matrix_ops_match_finite_differences() {
    check_op("matmul", &[&[3, 2], &[2, 4]], 1.0, |t, p| {
        t.matmul(&p[0], &p[1])
    });
    check_op("matvec", &[&[3, 4], &[4]], 1.0, |t, p| t.matvec(&p[0], &p[1]));
    check_op("vecmat", &[&[3], &[3, 4]], 1.0, |t, p| t.vecmat(&p[0], &p[1]));
}

#[test]
fn shaping_and_reduction_ops_match_finite_differences() {
    check_op("sum", &[&[2, 3]], 1.0, |t, p| Ok(t.sum(&p[0])));
    check_op("mean_rows", &[&[4, 3]], 1.0, |t, p| t.mean_rows(&p[0]));
    check_op("row", &[&[4, 3]], 1.0, |t, p| t.row(&p[0], 2));
    check_op("concat", &[&[3], &[2]], 1.0, |t, p| t.concat(&p[0], &p[1]));
    check_op("reshape", &[&[2, 6]], 1.0, |t, p| t.reshape(&p[0], vec![3, 4]));
    check_op("broadcast_rows", &[&[3]], 1.0, |t, p| {
        t.broadcast_rows(&p[0], 4)
    });
}

#[test]
fn softmax_and_cross_entropy_match_finite_differences() {
    check_op("softmax", &[&[5]], 3.0, |t, p| t.softmax(&p[0]));
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xce ^ trial);
        let logits = random_param(&[6], 2.0, &mut rng);
        let target = (trial % 6) as usize;
        let p = logits.clone();
        let err = grad_check(
            |tape| tape.cross_entropy_logits(&p, target),
            std::slice::from_ref(&logits),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "cross_entropy trial {trial}: {err}");
    }
}

/// The acceptance-sized decoder chain: a full step plus masked loss is
/// differentiable end to end.
#[test]
fn decoder_step_gradient_integrity() {
    let dims = ModelDims {
        feature_dim: 3,
        embed_dim: 3,
        attn_dim: 3,
        hidden_dim: 4,
        vocab_size: 6,
        patch_dim: 4,
    };
    let model = CaptionModel::new(dims, 123).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(321);
    let features: Vec<f64> = (0..4 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grid = Tensor::from_vec(vec![4, 3], features).unwrap();
    let params = model.param_tensors();

    let start = std::time::Instant::now();
    let err = grad_check(
        |tape| {
            let mut hidden = model.init_hidden(tape, &grid)?;
            let sequence = [START, 4, 5, END];
            let mut logit_steps = Vec::new();
            for &token in &sequence[..sequence.len() - 1] {
                let step = model.decoder_step(tape, token, &hidden, &grid)?;
                hidden = step.hidden;
                logit_steps.push(step.logits);
            }
            cross_entropy_loss(tape, &logit_steps, &sequence[1..], &[true; 3])
        },
        &params,
        1e-5,
    )
    .unwrap();
    let elapsed = start.elapsed();
    assert!(err < 1e-4, "max rel error {err}");
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "gradient check took {elapsed:?}"
    );
}
