//! Fixtures shared by the criterion benchmarks.

use twistlab_core::{parse_map, HomMap, NormedSpace};

/// `kp + 0.3 * A` on `l2^dim` with a fixed tridiagonal `A`.
pub fn perturbed_kp(dim: usize) -> HomMap {
    let rows: Vec<String> = (0..dim)
        .map(|i| {
            let cells: Vec<String> = (0..dim)
                .map(|j| match i as isize - j as isize {
                    0 => "2".to_string(),
                    -1 | 1 => "-1".to_string(),
                    _ => "0".to_string(),
                })
                .collect();
            format!("[{}]", cells.join(","))
        })
        .collect();
    let text = format!("sum(kp,scale(0.3,linear([{}])))", rows.join(","));
    parse_map(&text, NormedSpace::l2(dim), NormedSpace::l2(dim)).expect("well-formed fixture")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_nonlinear_on_the_requested_space() {
        let h = perturbed_kp(3);
        assert_eq!(h.domain().dim(), 3);
        assert!(!h.is_linear());
    }
}
