use aum_core::autodiff::gradcheck::check_gradients;
use aum_core::autodiff::Var;
use aum_core::data::Patient;
use aum_core::message_passing::AttentionMode;
use aum_core::model::{AumModel, ModelConfig};
use aum_core::rng::{normal_vec, seeded, stream};
use aum_core::training::{batch_loss, TrainConfig};
use aum_core::{Error, Tensor};
use rand::Rng;

fn patients(rng: &mut impl Rng, n: usize, dims: &[usize]) -> Vec<Patient> {
    (0..n)
        .map(|id| {
            let keep = rng.random_range(0..dims.len());
            let observations = dims
                .iter()
                .enumerate()
                .map(|(m, &d)| (m == keep || rng.random_bool(0.6)).then(|| normal_vec(rng, d)))
                .collect();
            Patient {
                id,
                label: rng.random_range(0..2),
                latent: Vec::new(),
                risk_score: 0.0,
                observations,
            }
        })
        .collect()
}

#[test]
fn total_loss_gradient_through_propagation() {
    let mut rng = seeded(11);
    for case in 0..40 {
        let d = rng.random_range(2..=4);
        let dims: Vec<usize> = (0..rng.random_range(2..=3)).map(|_| rng.random_range(1..=3)).collect();
        let mc = ModelConfig {
            input_dims: dims.clone(),
            latent_dim: d,
            hidden_dim: 2 * d,
            layers: rng.random_range(1..=2),
            attention: if case % 3 == 2 { AttentionMode::Uniform } else { AttentionMode::Uncertainty },
            learned_variance: case % 2 == 1,
            ..ModelConfig::default()
        };
        let model = AumModel::init(&mc, case).unwrap();
        let n = rng.random_range(2..=3);
        let ps = patients(&mut rng, n, &dims);
        let batch: Vec<&Patient> = ps.iter().collect();
        let tc = TrainConfig { drop_ratio: 0.5, ..TrainConfig::default() };
        let mut inputs: Vec<Tensor> = Vec::new();
        // Zero-initialised biases put some ReLU inputs exactly on the kink.
        model.visit(&mut |_, _, t| {
            let noise = normal_vec(&mut rng, t.len());
            let data = t.data().iter().zip(noise).map(|(x, e)| x + 0.05 * e).collect();
            inputs.push(Tensor::new(t.rows(), t.cols(), data).unwrap());
        });
        let report = check_gradients::<_, Error>(
            |tape, vars: &[Var]| {
                let mut i = 0;
                let bound = model.map(&mut |_, _, _| {
                    i += 1;
                    vars[i - 1]
                });
                let (loss, _) = batch_loss(tape, &bound, &batch, &tc, &mut stream(case, 60))?;
                Ok(loss)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "case {case}: {} at {:?}", report.max_rel_err, report.worst);
    }
}
