// scratch calibration runner (not part of the deliverable)
use ghostmask::analysis::*;
use ghostmask::patterns::*;
use ghostmask::phantoms::{make_phantom, PhantomSpec};

fn main() {
    let master = gen_master(&MaskParams::new(MaskKind::Binary), 96, 96, 11).unwrap();
    let obj = make_phantom(&PhantomSpec::circle(32, 5)).unwrap();
    let js = [256usize, 512, 1024, 2048, 4096];
    for (sigma, trials) in [(0.0, 8), (6.0, 12), (8.0, 12)] {
        let rows = dose_sweep(&master, &obj, 5000.0, &js, sigma, trials, 31).unwrap();
        println!("sigma_m = {sigma} trials = {trials}");
        for r in &rows {
            let close = (r.rmse_total.powi(2) - r.quadrature.powi(2)).abs() / r.rmse_total.powi(2);
            println!("  J={:5} total={:.4} r0={:.4} rp={:.4} rm={:.4} quad={:.4} close={:.3}",
                r.j, r.rmse_total, r.rmse_0, r.rmse_p, r.rmse_m, r.quadrature, close);
        }
    }
}
