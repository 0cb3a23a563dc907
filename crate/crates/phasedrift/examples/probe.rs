use phasedrift::corr::{Component, CorrelationModel, KernelFamily};
use nalgebra::Vector3;
fn main() {
    let m = CorrelationModel::new(KernelFamily::BumpSpectrum, 1.0, 1.0, 1.0, 0.0).unwrap();
    for r in [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0] {
        // local max of |g| over a window to capture the oscillation envelope
        let mut mx = 0.0f64;
        for i in 0..200 {
            let rr = r * (1.0 + 0.25 * i as f64 / 200.0);
            let v = m.eval(Component::VV, Vector3::new(rr, 0.0, 0.0)).abs();
            if v > mx { mx = v; }
        }
        let c_eff = -mx.ln() / (r as f64).sqrt();
        println!("r={r:8.1}  env|g|={mx:.3e}  c_eff={c_eff:.4}");
    }
}
