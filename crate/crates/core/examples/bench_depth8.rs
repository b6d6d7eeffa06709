use num::BigRational;
use shiftlab::symbolic::*;
use std::time::Instant;

fn rat(n: i64, d: i64) -> BigRational { BigRational::new(n.into(), d.into()) }

fn main() {
    for (name, m) in [
        ("uv(1/2,1/2)", CylinderMeasure::product_conformal_uv(rat(1,2), rat(1,2)).unwrap()),
        ("uv(2,2)", CylinderMeasure::product_conformal_uv(rat(2,1), rat(2,1)).unwrap()),
        ("uv(1/2,1/4)", CylinderMeasure::product_conformal_uv(rat(1,2), rat(1,4)).unwrap()),
        ("root(1,2,ln3)", CylinderMeasure::product_conformal_root(1, 2, 3f64.ln()).unwrap()),
    ] {
        let t = Instant::now();
        let rep = check_conformal(&m, 8, Mode::Exact).unwrap();
        println!("{name}: rows={} verdict={} in {:?}", rep.rows.len(), rep.verdict(), t.elapsed());
        let t = Instant::now();
        let dual = m.pushforward_flip();
        let rep = check_conformal(&dual, 8, Mode::Exact).unwrap();
        println!("  dual: verdict={} in {:?}", rep.verdict(), t.elapsed());
    }
    // orbit exact at depth 5 (general path)
    let o = CylinderMeasure::orbit_uv(rat(1,2), rat(1,2)).unwrap();
    let t = Instant::now();
    let rep = check_conformal(&o, 5, Mode::Exact).unwrap();
    println!("orbit depth5: verdict={} in {:?}", rep.verdict(), t.elapsed());
}
