//! Parameter and FLOP counts of the three classifiers, per layer.

use avwake::models::{Modality, Topology, WwsModel};

fn main() -> avwake::Result<()> {
    for m in [Modality::Audio, Modality::Video, Modality::Av] {
        let model = WwsModel::new(m, Topology::default(), 0)?;
        let report = model.cost_report()?;
        println!(
            "== {} ({} params, {} FLOPs)",
            m.as_str(),
            report.total_params(),
            report.total_flops()
        );
        print!("{}", report.to_csv());
    }
    Ok(())
}
