//! Squared-error rating loss and pairwise BPR ranking loss over hierarchical
//! embeddings. Losses are sums over the batch and carry no L2 term; shrinkage
//! comes from the optimizer's decoupled weight decay.

use crate::error::{Error, Result};
use crate::model::{backward_through_hierarchy, compose_rows, ModelParameters, SideGradients};
use crate::numerics::{dot, DenseMatrix};

/// `(user, item, rating)` triple with dense indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingExample {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

/// `(user, positive item, negative item)` triple with dense indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triplet {
    pub user: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub user: SideGradients,
    pub item: SideGradients,
}

/// Inner product of a user and an item embedding.
pub fn predict_rating(user_row: &[f64], item_row: &[f64]) -> Result<f64> {
    if user_row.len() != item_row.len() {
        return Err(Error::InvalidArgument(format!(
            "embedding dimensions differ: {} vs {}",
            user_row.len(),
            item_row.len()
        )));
    }
    Ok(dot(user_row, item_row))
}

/// Scores every `(user, item)` pair against composed embedding matrices.
pub fn predict_batch(users: &DenseMatrix, items: &DenseMatrix, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|&(u, i)| {
            if u >= users.rows() || i >= items.rows() {
                return Err(Error::IndexOutOfRange {
                    what: "prediction pair",
                    index: u.max(i),
                    size: users.rows().min(items.rows()),
                });
            }
            predict_rating(users.row(u), items.row(i))
        })
        .collect()
}

/// `−ln σ(−x) = ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sorted unique values and, for each input, its position among them.
fn dedup_positions(values: impl Iterator<Item = usize>) -> (Vec<usize>, impl Fn(usize) -> usize) {
    let mut unique: Vec<usize> = values.collect();
    unique.sort_unstable();
    unique.dedup();
    let lookup = unique.clone();
    (unique, move |v| lookup.binary_search(&v).expect("value was collected"))
}

fn check_indices(params: &ModelParameters, users: impl Iterator<Item = usize>, items: impl Iterator<Item = usize>) -> Result<()> {
    let (m, n) = (params.spec.num_users, params.spec.num_items);
    for u in users {
        if u >= m {
            return Err(Error::IndexOutOfRange { what: "user", index: u, size: m });
        }
    }
    for i in items {
        if i >= n {
            return Err(Error::IndexOutOfRange { what: "item", index: i, size: n });
        }
    }
    Ok(())
}

/// `Σ (x − ⟨u, v⟩)²` and its gradients with respect to every parameter.
pub fn rating_loss_and_grad(params: &ModelParameters, batch: &[RatingExample]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty rating batch".into()));
    }
    check_indices(params, batch.iter().map(|x| x.user), batch.iter().map(|x| x.item))?;
    if let Some(bad) = batch.iter().find(|x| !x.rating.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite rating {}", bad.rating)));
    }
    let mut sorted = batch.to_vec();
    sorted.sort_by(|a, b| {
        (a.user, a.item)
            .cmp(&(b.user, b.item))
            .then(a.rating.total_cmp(&b.rating))
    });

    let (users, user_pos) = dedup_positions(sorted.iter().map(|x| x.user));
    let (items, item_pos) = dedup_positions(sorted.iter().map(|x| x.item));
    let uf = compose_rows(&params.user, &users)?;
    let vf = compose_rows(&params.item, &items)?;
    let dim = params.spec.dim;
    let mut gu = DenseMatrix::zeros(users.len(), dim);
    let mut gv = DenseMatrix::zeros(items.len(), dim);
    let mut loss = 0.0;
    for x in &sorted {
        let (pu, pi) = (user_pos(x.user), item_pos(x.item));
        let u = uf.output.row(pu);
        let v = vf.output.row(pi);
        let residual = x.rating - dot(u, v);
        loss += residual * residual;
        let scale = -2.0 * residual;
        for (g, &vk) in gu.row_mut(pu).iter_mut().zip(v) {
            *g += scale * vk;
        }
        for (g, &uk) in gv.row_mut(pi).iter_mut().zip(u) {
            *g += scale * uk;
        }
    }
    let grads = Gradients {
        user: backward_through_hierarchy(&params.user, &uf, &gu)?,
        item: backward_through_hierarchy(&params.item, &vf, &gv)?,
    };
    Ok((loss, grads))
}

/// `−Σ ln σ(⟨u, v⁺⟩ − ⟨u, v⁻⟩)` and its gradients.
pub fn bpr_loss_and_grad(params: &ModelParameters, batch: &[Triplet]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty triplet batch".into()));
    }
    check_indices(
        params,
        batch.iter().map(|x| x.user),
        batch.iter().flat_map(|x| [x.positive, x.negative]),
    )?;
    let mut sorted = batch.to_vec();
    sorted.sort_unstable();

    let (users, user_pos) = dedup_positions(sorted.iter().map(|x| x.user));
    let (items, item_pos) = dedup_positions(sorted.iter().flat_map(|x| [x.positive, x.negative]));
    let uf = compose_rows(&params.user, &users)?;
    let vf = compose_rows(&params.item, &items)?;
    let dim = params.spec.dim;
    let mut gu = DenseMatrix::zeros(users.len(), dim);
    let mut gv = DenseMatrix::zeros(items.len(), dim);
    let mut loss = 0.0;
    for x in &sorted {
        let pu = user_pos(x.user);
        let (pj, pk) = (item_pos(x.positive), item_pos(x.negative));
        let u = uf.output.row(pu);
        let vj = vf.output.row(pj);
        let vk = vf.output.row(pk);
        let diff = dot(u, vj) - dot(u, vk);
        loss += softplus(-diff);
        // d/d(diff) of softplus(−diff)
        let scale = -sigmoid(-diff);
        for ((g, &a), &b) in gu.row_mut(pu).iter_mut().zip(vj).zip(vk) {
            *g += scale * (a - b);
        }
        for (g, &uk) in gv.row_mut(pj).iter_mut().zip(u) {
            *g += scale * uk;
        }
        for (g, &uk) in gv.row_mut(pk).iter_mut().zip(u) {
            *g -= scale * uk;
        }
    }
    let grads = Gradients {
        user: backward_through_hierarchy(&params.user, &uf, &gu)?,
        item: backward_through_hierarchy(&params.item, &vf, &gv)?,
    };
    Ok((loss, grads))
}
