use peum::density::solve_power;
use peum::sample;
use peum::transfer::apply_l;

fn main() {
    let map = sample::tent_perturbed_default();
    let tol = 1e-9;
    let r = solve_power(&map, 2048, tol, 300).unwrap();
    let lr = apply_l(&map, &r.rho).unwrap();
    let d = lr.sub(&r.rho).unwrap();
    println!("sup(Lrho-rho) = {:.3e}", d.sup_norm());
    println!("var(Lrho-rho) = {:.3e}", d.total_variation());
    println!("бv bound      = {:.3e}", 10.0 * tol * r.rho.bv_norm().max(1.0));
    println!("rho bv        = {:.3}", r.rho.bv_norm());
    println!("iterations    = {}", r.iterations);
    // where is the variation concentrated?
    let mut worst = (0usize, 0.0f64);
    let vals = d.values();
    for i in 1..vals.len() {
        let dv = (vals[i] - vals[i-1]).abs();
        if dv > worst.1 { worst = (i, dv); }
    }
    println!("worst step {:.3e} at cell {} x={:.6}", worst.1, worst.0, d.cell_center(worst.0));
    println!("jumps of diff: {}", d.jumps().len());
    let mut jsum = 0.0;
    for j in d.jumps() { jsum += j.magnitude.abs(); }
    println!("sum |alpha| of diff = {:.3e}", jsum);
}
