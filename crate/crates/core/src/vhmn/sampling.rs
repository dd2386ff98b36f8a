use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::VhmnParams;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledPath {
    pub hidden: Vec<usize>,
    pub visible: Vec<usize>,
    pub observed: Vec<usize>,
}

struct Cumulative(Vec<Vec<f64>>);

impl Cumulative {
    fn new<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Self {
        Cumulative(
            rows.map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect(),
        )
    }

    fn draw(&self, row: usize, rng: &mut impl Rng) -> usize {
        let cdf = &self.0[row];
        let u = rng.random::<f64>() * cdf[cdf.len() - 1];
        cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
    }
}

/// Draws `h_0 ~ Z`, then for each step `s_t ~ B[h_t]`, `o_t ~ C[s_t]` and
/// `h_{t+1} ~ A[h_t]`.
pub fn sample_path(params: &VhmnParams, len: usize, rng: &mut impl Rng) -> SampledPath {
    let j = params.dims().hidden;
    let a = Cumulative::new((0..j).map(|i| params.a.row(i)));
    let b = Cumulative::new((0..j).map(|i| params.b.row(i)));
    let c = Cumulative::new((0..params.c.rows()).map(|k| params.c.row(k)));
    let z = Cumulative::new(std::iter::once(params.z.as_slice()));

    let mut path = SampledPath {
        hidden: Vec::with_capacity(len),
        visible: Vec::with_capacity(len),
        observed: Vec::with_capacity(len),
    };
    if len == 0 {
        return path;
    }
    let mut h = z.draw(0, rng);
    for t in 0..len {
        let s = b.draw(h, rng);
        let o = c.draw(s, rng);
        path.hidden.push(h);
        path.visible.push(s);
        path.observed.push(o);
        if t + 1 < len {
            h = a.draw(h, rng);
        }
    }
    path
}

pub fn sample_path_seeded(params: &VhmnParams, len: usize, seed: u64, stream: u64) -> SampledPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    sample_path(params, len, &mut rng)
}
