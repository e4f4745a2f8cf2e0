//! Straight-line restatements of the S-measure and weighted F-measure over
//! 2-D grids, sharing no code with the library.

/// Row-major buffers as rows; the mask becomes 0/1.
pub fn grid(h: usize, w: usize, p: &[f64], g: &[bool]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let pr = (0..h).map(|y| p[y * w..(y + 1) * w].to_vec()).collect();
    let gr = (0..h)
        .map(|y| (0..w).map(|x| if g[y * w + x] { 1.0 } else { 0.0 }).collect())
        .collect();
    (pr, gr)
}

fn std_sample(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return 0.0;
    }
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let n = p.len() as f64;
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let d = if p.len() > 1 { n - 1.0 } else { 1.0 };
    let sx = p.iter().map(|v| (v - x).powi(2)).sum::<f64>() / d;
    let sy = g.iter().map(|v| (v - y).powi(2)).sum::<f64>() / d;
    let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / d;
    let a = 4.0 * x * y * sxy;
    let b = (x * x + y * y) * (sx + sy);
    if a != 0.0 {
        if b == 0.0 {
            0.0
        } else {
            a / b
        }
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn s_measure(p: &[Vec<f64>], g: &[Vec<f64>]) -> f64 {
    let (h, w) = (g.len(), g[0].len());
    let total = (h * w) as f64;
    let gm = g.iter().flatten().sum::<f64>() / total;
    let pm = p.iter().flatten().sum::<f64>() / total;
    if gm == 0.0 {
        return 1.0 - pm;
    }
    if gm == 1.0 {
        return pm;
    }
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if g[y][x] == 1.0 {
                fg.push(p[y][x]);
            } else {
                bg.push(1.0 - p[y][x]);
            }
        }
    }
    let obj = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        2.0 * m / (m * m + 1.0 + std_sample(v))
    };
    let so = gm * obj(&fg) + (1.0 - gm) * obj(&bg);

    let (mut cy, mut cx, mut cnt) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if g[y][x] == 1.0 {
                cy += y as f64;
                cx += x as f64;
                cnt += 1.0;
            }
        }
    }
    let xs = ((cx / cnt).round_ties_even() as usize + 1).min(w);
    let ys = ((cy / cnt).round_ties_even() as usize + 1).min(h);
    let region = |y0: usize, y1: usize, x0: usize, x1: usize| {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                a.push(p[y][x]);
                b.push(g[y][x]);
            }
        }
        ssim(&a, &b)
    };
    let w1 = (xs * ys) as f64 / total;
    let w2 = ((w - xs) * ys) as f64 / total;
    let w3 = (xs * (h - ys)) as f64 / total;
    let w4 = 1.0 - w1 - w2 - w3;
    let sr = w1 * region(0, ys, 0, xs)
        + w2 * region(0, ys, xs, w)
        + w3 * region(ys, h, 0, xs)
        + w4 * region(ys, h, xs, w);
    (0.5 * so + 0.5 * sr).max(0.0)
}

pub fn weighted_f(p: &[Vec<f64>], g: &[Vec<f64>]) -> f64 {
    let (h, w) = (g.len(), g[0].len());
    let fgs: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| g[y][x] == 1.0)
        .collect();
    if fgs.is_empty() {
        return 0.0;
    }
    // brute-force nearest foreground, first in row-major order on ties
    let mut dist = vec![vec![0.0; w]; h];
    let mut near = vec![vec![(0, 0); w]; h];
    for y in 0..h {
        for x in 0..w {
            let mut best = (i64::MAX, (0, 0));
            for &(fy, fx) in &fgs {
                let d = (fy as i64 - y as i64).pow(2) + (fx as i64 - x as i64).pow(2);
                if d < best.0 {
                    best = (d, (fy, fx));
                }
            }
            dist[y][x] = (best.0 as f64).sqrt();
            near[y][x] = best.1;
        }
    }
    let e: Vec<Vec<f64>> = (0..h).map(|y| (0..w).map(|x| (p[y][x] - g[y][x]).abs()).collect()).collect();
    let et: Vec<Vec<f64>> = (0..h)
        .map(|y| {
            (0..w)
                .map(|x| if g[y][x] == 1.0 { e[y][x] } else { e[near[y][x].0][near[y][x].1] })
                .collect()
        })
        .collect();
    let mut k = [[0.0; 7]; 7];
    let mut ks = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let r2 = (i as f64 - 3.0).powi(2) + (j as f64 - 3.0).powi(2);
            *v = (-r2 / 50.0).exp();
            ks += *v;
        }
    }
    let mut ea = vec![vec![0.0; w]; h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut s = 0.0;
            for dy in -3..=3i64 {
                for dx in -3..=3i64 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                        s += k[(dy + 3) as usize][(dx + 3) as usize] / ks * et[yy as usize][xx as usize];
                    }
                }
            }
            ea[y as usize][x as usize] = s;
        }
    }
    let (mut sum_fg, mut sum_bg, mut n_fg) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if g[y][x] == 1.0 {
                sum_fg += e[y][x].min(ea[y][x]);
                n_fg += 1.0;
            } else {
                let b = 2.0 - ((0.5f64).ln() / 5.0 * dist[y][x]).exp();
                sum_bg += e[y][x] * b;
            }
        }
    }
    let tp = n_fg - sum_fg;
    let r = 1.0 - sum_fg / n_fg;
    let pr = if tp + sum_bg == 0.0 { 0.0 } else { tp / (tp + sum_bg) };
    if pr + r == 0.0 {
        0.0
    } else {
        2.0 * pr * r / (pr + r)
    }
}
