use forecast_combine::eval::huber_fit;
use forecast_combine::rng::derive_rng;
use rand::Rng;
fn main() {
    for rep in 0..5u64 {
        let mut rng = derive_rng(rep, "acceptance:c10");
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|&xi| {
            if xi > 9.0 { xi - 30.0 + rng.gen_range(-1.0..1.0) }
            else { xi + 0.3 * rng.gen_range(-1.0..1.0) }
        }).collect();
        let fit = huber_fit(&x, &y, 1000, rep).unwrap();
        println!("rep {rep}: slope {:.4} ci ({:.4}, {:.4})", fit.slope, fit.slope_ci.0, fit.slope_ci.1);
    }
}
