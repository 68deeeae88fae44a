// dev scratch: simply supported fixture topology run
use topoframe::problem::*;
use topoframe::topopt;

fn main() {
    let mut p = DesignProblem::default_parameters();
    p.nx = 200;
    p.ny = 50;
    p.volume_fraction = 0.3;
    p.filter_radius = 5.4;
    p.supports = vec![
        Support { pixel: Pixel::new(49, 0), dofs: vec![Dof::Ux, Dof::Uy] },
        Support { pixel: Pixel::new(49, 199), dofs: vec![Dof::Uy] },
    ];
    p.loads = vec![Load { pixel: Pixel::new(0, 99), fx: 0.0, fy: -1.0e5 }];
    let t0 = std::time::Instant::now();
    let (field, trace) = topopt::run_topopt(&p).unwrap();
    println!("iterations: {}", trace.iterations());
    println!("elapsed: {:?}", t0.elapsed());
    println!("final volume fraction: {:.6}", trace.volume_fraction.last().unwrap());
    println!("final compliance: {:.4e}", trace.compliance.last().unwrap());
    let mut img = String::new();
    for row in (0..field.ny).step_by(2) {
        for col in (0..field.nx).step_by(2) {
            let r = field.filtered[row * field.nx + col];
            img.push(if r > 0.7 { '#' } else if r > 0.3 { '+' } else { '.' });
        }
        img.push('\n');
    }
    println!("{img}");
}
