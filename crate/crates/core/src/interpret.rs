//! Cluster sizes, cluster affinity tables and nearest-object labelling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::UserItemIndex;
use crate::error::{Error, Result};
use crate::model::{compose_embeddings, ModelParameters, SideParameters};
use crate::numerics::{dot, row_softmax, DenseMatrix};

/// Soft size of each cluster: column sums of a row-stochastic assignment.
pub fn cluster_sizes(assignment: &DenseMatrix) -> Vec<f64> {
    assignment.col_sums()
}

/// `users · itemsᵀ` for cluster embeddings of equal dimension.
pub fn cluster_affinity(users: &DenseMatrix, items: &DenseMatrix) -> Result<DenseMatrix> {
    if users.cols() != items.cols() {
        return Err(Error::ShapeMismatch {
            context: "cluster affinity",
            expected: (items.rows(), users.cols()),
            actual: items.shape(),
        });
    }
    users.matmul_t(items)
}

/// Indices of the `k` objects with the largest inner product against
/// `cluster`; ties go to the lower index.
pub fn nearest_objects(cluster: &[f64], objects: &DenseMatrix, k: usize) -> Result<Vec<usize>> {
    if cluster.len() != objects.cols() {
        return Err(Error::ShapeMismatch {
            context: "nearest objects",
            expected: (objects.rows(), cluster.len()),
            actual: objects.shape(),
        });
    }
    let scores: Vec<f64> = (0..objects.rows()).map(|r| dot(cluster, objects.row(r))).collect();
    let mut order: Vec<usize> = (0..objects.rows()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn counterpart(self) -> Side {
        match self {
            Side::User => Side::Item,
            Side::Item => Side::User,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

/// External id to display label, read from an `id,label` CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Labels(HashMap<String, String>);

impl Labels {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("missing column `{name}`"),
            })
        };
        let (id_col, label_col) = (col("id")?, col("label")?);
        let mut map = HashMap::new();
        for record in reader.records() {
            let record = record?;
            if let (Some(id), Some(label)) = (record.get(id_col), record.get(label_col)) {
                map.insert(id.trim().to_string(), label.trim().to_string());
            }
        }
        Ok(Labels(map))
    }

    /// Loads `path` if given; on any failure logs a warning and returns `None`
    /// so callers fall back to dense indices.
    pub fn load_optional(path: Option<&Path>) -> Option<Self> {
        let path = path?;
        match Labels::load(path) {
            Ok(labels) => Some(labels),
            Err(e) => {
                log::warn!("metadata unavailable ({e}); labelling objects by index");
                None
            }
        }
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.0.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Hierarchy level the clusters are taken from (1 = first cluster level).
    pub level: usize,
    pub k_neighbors: usize,
    /// Rows kept from each end of the sorted affinity list.
    pub k_rows: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            level: 1,
            k_neighbors: 10,
            k_rows: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cluster: usize,
    pub size: f64,
    pub labels: Vec<String>,
    pub inner_product: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub side: Side,
    pub cluster: usize,
    pub level: usize,
    pub size: f64,
    /// Counterpart clusters by descending inner product.
    pub rows: Vec<ReportRow>,
    /// Counterpart clusters dropped from the middle of the ranking.
    pub omitted: usize,
}

/// Soft sizes and embeddings of the clusters at `level` of one side.
struct LevelView {
    sizes: Vec<f64>,
    embeddings: DenseMatrix,
}

fn level_view(params: &SideParameters, level: usize, side: Side) -> Result<LevelView> {
    if params.depth() == 0 {
        return Err(Error::InvalidArgument(format!("no clusters at depth 0 on the {} side", side.name())));
    }
    if level == 0 || level > params.depth() {
        return Err(Error::InvalidArgument(format!(
            "level {level} outside 1..={} on the {} side",
            params.depth(),
            side.name()
        )));
    }
    Ok(LevelView {
        sizes: cluster_sizes(&row_softmax(&params.logits[level - 1])?),
        embeddings: params.level_embeddings(level)?,
    })
}

fn object_label(index: &UserItemIndex, side: Side, object: usize, labels: Option<&Labels>) -> String {
    let ids = match side {
        Side::User => index.user_ids(),
        Side::Item => index.item_ids(),
    };
    labels
        .and_then(|l| ids.get(object).and_then(|id| l.get(id)))
        .map_or_else(|| object.to_string(), str::to_string)
}

/// For each target cluster on `side`, ranks every counterpart cluster at the
/// same level by inner product and labels it with its nearest counterpart
/// objects. `counterpart_labels` maps counterpart external ids to labels.
pub fn build_cluster_report(
    params: &ModelParameters,
    index: &UserItemIndex,
    side: Side,
    targets: &[usize],
    counterpart_labels: Option<&Labels>,
    options: &ReportOptions,
) -> Result<Vec<ClusterReport>> {
    let (own, other) = match side {
        Side::User => (&params.user, &params.item),
        Side::Item => (&params.item, &params.user),
    };
    let own_view = level_view(own, options.level, side)?;
    let other_view = level_view(other, options.level, side.counterpart())?;
    let objects = compose_embeddings(other)?.level0;
    let affinity = cluster_affinity(&own_view.embeddings, &other_view.embeddings)?;
    let count = other_view.sizes.len();

    let neighbors = (0..count)
        .map(|c| {
            let nearest = nearest_objects(other_view.embeddings.row(c), &objects, options.k_neighbors.min(objects.rows()))?;
            Ok(nearest
                .into_iter()
                .map(|o| object_label(index, side.counterpart(), o, counterpart_labels))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    targets
        .iter()
        .map(|&target| {
            if target >= own_view.sizes.len() {
                return Err(Error::IndexOutOfRange {
                    what: "cluster",
                    index: target,
                    size: own_view.sizes.len(),
                });
            }
            let scores = affinity.row(target);
            let mut order: Vec<usize> = (0..count).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let omitted = count.saturating_sub(2 * options.k_rows);
            if omitted > 0 {
                order.drain(options.k_rows..count - options.k_rows);
            }
            let rows = order
                .into_iter()
                .map(|c| ReportRow {
                    cluster: c,
                    size: other_view.sizes[c],
                    labels: neighbors[c].clone(),
                    inner_product: scores[c],
                })
                .collect();
            Ok(ClusterReport {
                side,
                cluster: target,
                level: options.level,
                size: own_view.sizes[target],
                rows,
                omitted,
            })
        })
        .collect()
}

/// One CSV row per report row.
pub fn reports_to_csv(reports: &[ClusterReport]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["side", "level", "cluster", "cluster_size", "counterpart", "counterpart_size", "labels", "inner_product"])?;
    for r in reports {
        for row in &r.rows {
            writer.write_record([
                r.side.name().to_string(),
                r.level.to_string(),
                r.cluster.to_string(),
                format!("{:.2}", r.size),
                row.cluster.to_string(),
                format!("{:.2}", row.size),
                row.labels.join("; "),
                format!("{:.4}", row.inner_product),
            ])?;
        }
    }
    let bytes = writer.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Plain-text table: cluster id, size, labels, inner product.
pub fn render_table(report: &ClusterReport) -> String {
    let other = report.side.counterpart().name();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} cluster {} (level {}, size {:.2})",
        report.side.name(),
        report.cluster,
        report.level,
        report.size
    );
    let _ = writeln!(out, "{:>8}  {:>8}  {:<60}  {:>10}", format!("{other} id"), "size", "labels", "inner prod");
    let split = if report.omitted > 0 { report.rows.len() / 2 } else { usize::MAX };
    for (k, row) in report.rows.iter().enumerate() {
        if k == split {
            let _ = writeln!(out, "{:>8}  ({} clusters omitted)", "...", report.omitted);
        }
        let _ = writeln!(
            out,
            "{:>8}  {:>8.2}  {:<60}  {:>10.4}",
            row.cluster,
            row.size,
            row.labels.join(", "),
            row.inner_product
        );
    }
    out
}
