//! Secret key rate and Holevo bound versus excess noise at one operating
//! point, including where the key rate drops to zero.

use fso_cvqkd::keyrate::{holevo_bound, secret_rate, symplectic_spectrum, RateInputs};
use fso_cvqkd::units::{db_to_transmittance, DbLoss};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = RateInputs {
        f: 2.5e6,
        alpha_overhead: 0.5,
        beta: 0.965,
        fer: 0.86,
        v_a: 8.9241,
        t: db_to_transmittance(DbLoss::new(16.502)?),
        eps: 0.0258,
        eta: 0.375,
        nu_el: 0.1494,
    };
    let s = symplectic_spectrum(&base)?;
    println!("symplectic eigenvalues: joint {:?}, conditional {:?}", s.joint, s.conditional);
    println!("{:>8} {:>9} {:>9} {:>9} {:>10}", "eps", "SNR", "I_AB", "chi_BE", "R (bps)");
    for k in 0..=10 {
        let eps = 0.005 * k as f64;
        let inp = RateInputs { eps, ..base };
        let r = secret_rate(&inp)?;
        println!("{eps:>8.3} {:>9.5} {:>9.6} {:>9.6} {:>10.2}", r.snr, r.i_ab, holevo_bound(&inp)?, r.r_secret);
    }
    Ok(())
}
