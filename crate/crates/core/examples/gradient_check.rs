//! Checks reverse-mode gradients of a small conv + LSTM stack against
//! central differences.

use avwake::nn::{Conv2d, Lstm, ParamRegistry};
use avwake::tensor::{ConvGeom, Coords, GradCheck, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> avwake::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut reg = ParamRegistry::new();
    let conv = Conv2d::new(
        &mut reg,
        &mut rng,
        "conv",
        1,
        2,
        (3, 3),
        ConvGeom::new((1, 1), (1, 1)),
        false,
    )?;
    let lstm = Lstm::new(&mut reg, &mut rng, "lstm", 2 * 5, 3)?;
    let x = Tensor::new(
        vec![1, 1, 4, 5],
        (0..20).map(|i| (f64::from(i) * 0.37).sin()).collect(),
    )?;

    let report = GradCheck::new(1e-5, Coords::All).run(
        |p, g| {
            let b = p.bind(g)?;
            let input = g.constant(x.clone())?;
            let h = conv.forward(g, &b, input)?;
            let h = g.tanh(h)?;
            let h = g.permute(h, &[0, 2, 1, 3])?;
            let h = g.reshape(h, &[1, 4, 10])?;
            let h = lstm.forward(g, &b, h)?;
            g.mean(h)
        },
        &reg,
    )?;
    println!(
        "checked {} coordinates, worst relative error {:.2e}",
        report.checked, report.max_rel_error
    );
    if let Some((name, i, analytic, numeric)) = report.worst {
        println!("worst at {name}[{i}]: analytic {analytic:.6e}, numeric {numeric:.6e}");
    }
    Ok(())
}
