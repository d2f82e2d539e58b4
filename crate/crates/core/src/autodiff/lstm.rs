use super::Var;
use crate::error::{Error, Result};
use crate::tensor::{self, sigmoid, Tensor};

/// Saved state of a fused LSTM scan, kept for backpropagation through time.
pub(crate) struct LstmScan {
    pub(crate) x: Var,
    pub(crate) w_ih: Var,
    pub(crate) w_hh: Var,
    pub(crate) b: Var,
    reverse: bool,
    hidden: usize,
    /// Post-activation gates per step, `[T, 4H]` in scan order.
    gates: Vec<f64>,
    /// Cell states per step, `[T, H]` in scan order.
    cells: Vec<f64>,
    /// Hidden states per step, `[T, H]` in scan order.
    hs: Vec<f64>,
}

impl LstmScan {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn forward(
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        reverse: bool,
        xv: &Tensor,
        wih: &Tensor,
        whh: &Tensor,
        bv: &Tensor,
    ) -> Result<(Self, Tensor)> {
        let (c, t) = tensor::dims2("lstm_scan", xv)?;
        let h = match whh.shape() {
            &[g4, h] if g4 == 4 * h && h > 0 => h,
            other => return Err(Error::invalid("lstm_scan", format!("w_hh must be [4H, H], got {other:?}"))),
        };
        if wih.shape() != [4 * h, c] {
            return Err(Error::shape("lstm_scan", xv.shape(), wih.shape()));
        }
        if bv.shape() != [4 * h] {
            return Err(Error::shape("lstm_scan", whh.shape(), bv.shape()));
        }
        let g4 = 4 * h;
        // input projections for every timestep at once: [4H, T]
        let mut proj = vec![0.0; g4 * t];
        tensor::matmul_into(wih.data(), xv.data(), &mut proj, g4, c, t);

        let mut gates = vec![0.0; t * g4];
        let mut cells = vec![0.0; t * h];
        let mut hs = vec![0.0; t * h];
        let mut out = vec![0.0; h * t];
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut a = vec![0.0; g4];
        for s in 0..t {
            let ti = if reverse { t - 1 - s } else { s };
            for (r, av) in a.iter_mut().enumerate() {
                let wr = &whh.data()[r * h..(r + 1) * h];
                *av = proj[r * t + ti] + bv.data()[r] + wr.iter().zip(&h_prev).map(|(w, hv)| w * hv).sum::<f64>();
            }
            let gs = &mut gates[s * g4..(s + 1) * g4];
            for j in 0..h {
                let i_g = sigmoid(a[j]);
                let f_g = sigmoid(a[h + j]);
                let g_g = a[2 * h + j].tanh();
                let o_g = sigmoid(a[3 * h + j]);
                gs[j] = i_g;
                gs[h + j] = f_g;
                gs[2 * h + j] = g_g;
                gs[3 * h + j] = o_g;
                let c_new = f_g * c_prev[j] + i_g * g_g;
                let h_new = o_g * c_new.tanh();
                cells[s * h + j] = c_new;
                hs[s * h + j] = h_new;
                out[j * t + ti] = h_new;
            }
            h_prev.copy_from_slice(&hs[s * h..(s + 1) * h]);
            c_prev.copy_from_slice(&cells[s * h..(s + 1) * h]);
        }
        let scan = LstmScan {
            x,
            w_ih,
            w_hh,
            b,
            reverse,
            hidden: h,
            gates,
            cells,
            hs,
        };
        Ok((scan, Tensor::new(vec![h, t], out)?))
    }

    /// Backpropagation through time.
    pub(crate) fn backward(&self, xv: &Tensor, wih: &Tensor, whh: &Tensor, up: &Tensor) -> Vec<(Var, Tensor)> {
        let h = self.hidden;
        let g4 = 4 * h;
        let (c, t) = (xv.dim(0), xv.dim(1));
        let mut d_pre = vec![0.0; g4 * t]; // [4H, T], indexed by original time
        let mut dwhh = vec![0.0; g4 * h];
        let mut db = vec![0.0; g4];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; g4];
        let zeros = vec![0.0; h];
        for s in (0..t).rev() {
            let ti = if self.reverse { t - 1 - s } else { s };
            let gs = &self.gates[s * g4..(s + 1) * g4];
            let c_prev = if s > 0 { &self.cells[(s - 1) * h..s * h] } else { &zeros[..] };
            for j in 0..h {
                let (i_g, f_g, g_g, o_g) = (gs[j], gs[h + j], gs[2 * h + j], gs[3 * h + j]);
                let dh = up.data()[j * t + ti] + dh_next[j];
                let tc = self.cells[s * h + j].tanh();
                let d_o = dh * tc;
                let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
                let d_i = dc * g_g;
                let d_g = dc * i_g;
                let d_f = dc * c_prev[j];
                dc_next[j] = dc * f_g;
                da[j] = d_i * i_g * (1.0 - i_g);
                da[h + j] = d_f * f_g * (1.0 - f_g);
                da[2 * h + j] = d_g * (1.0 - g_g * g_g);
                da[3 * h + j] = d_o * o_g * (1.0 - o_g);
            }
            let h_prev = if s > 0 { &self.hs[(s - 1) * h..s * h] } else { &zeros[..] };
            dh_next.fill(0.0);
            for r in 0..g4 {
                let d = da[r];
                d_pre[r * t + ti] = d;
                db[r] += d;
                if d == 0.0 {
                    continue;
                }
                let wr = &whh.data()[r * h..(r + 1) * h];
                let dwr = &mut dwhh[r * h..(r + 1) * h];
                for j in 0..h {
                    dwr[j] += d * h_prev[j];
                    dh_next[j] += d * wr[j];
                }
            }
        }
        let mut dwih = vec![0.0; g4 * c];
        tensor::matmul_bt_into(&d_pre, xv.data(), &mut dwih, g4, t, c);
        let mut dx = vec![0.0; c * t];
        tensor::matmul_at_into(wih.data(), &d_pre, &mut dx, g4, c, t);
        vec![
            (self.x, Tensor::new(vec![c, t], dx).expect("shape")),
            (self.w_ih, Tensor::new(vec![g4, c], dwih).expect("shape")),
            (self.w_hh, Tensor::new(vec![g4, h], dwhh).expect("shape")),
            (self.b, Tensor::new(vec![g4], db).expect("shape")),
        ]
    }
}
