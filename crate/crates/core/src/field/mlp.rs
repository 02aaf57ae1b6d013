//! Dense layers over a shared flat parameter buffer.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Linear {
    pub input: usize,
    pub output: usize,
    /// Weights `[output][input]` row-major, then `output` biases.
    pub offset: usize,
}

impl Linear {
    pub fn param_count(&self) -> usize {
        self.output * (self.input + 1)
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        let w = &params[self.offset..self.offset + self.input * self.output];
        let b = &params[self.offset + self.input * self.output..self.offset + self.param_count()];
        for o in 0..self.output {
            let row = &w[o * self.input..(o + 1) * self.input];
            y[o] = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients and writes the input gradient into `gx`.
    pub fn backward(&self, params: &[f64], x: &[f64], gy: &[f64], grad: &mut [f64], gx: &mut [f64]) {
        let wn = self.input * self.output;
        let w = &params[self.offset..self.offset + wn];
        gx[..self.input].fill(0.0);
        for o in 0..self.output {
            let g = gy[o];
            if g == 0.0 {
                continue;
            }
            let row = &w[o * self.input..(o + 1) * self.input];
            let grow = &mut grad[self.offset + o * self.input..self.offset + (o + 1) * self.input];
            for i in 0..self.input {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
            grad[self.offset + wn + o] += g;
        }
    }
}

pub(crate) fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}
