#pragma once

// District adjacency graph and the spatial structure matrices built on it.

#include "stmort/csv.hpp"
#include "stmort/precision.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

namespace stmort {

struct Point2 {
  double x_km = 0.0;
  double y_km = 0.0;
};

inline double distance_km(const Point2& a, const Point2& b) {
  return std::hypot(a.x_km - b.x_km, a.y_km - b.y_km);
}

/// Undirected district graph. District order is fixed at construction and is
/// the row/column order of every downstream matrix.
class DistrictGraph {
 public:
  DistrictGraph() = default;

  /// `edges` are index pairs into `ids`. Self-loops are rejected, duplicate
  /// edges collapse.
  DistrictGraph(std::vector<std::string> ids, const std::vector<std::pair<Index, Index>>& edges,
                std::vector<double> elevation_m, std::vector<Point2> centroids)
      : ids_(std::move(ids)),
        neighbours_(ids_.size()),
        elevation_m_(std::move(elevation_m)),
        centroids_(std::move(centroids)) {
    require(!ids_.empty(), "district graph is empty");
    require(elevation_m_.size() == ids_.size(), "every district needs an elevation");
    require(centroids_.size() == ids_.size(), "every district needs a centroid");
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      require(index_.emplace(ids_[i], static_cast<Index>(i)).second, "duplicate district id: " + ids_[i]);
    }
    for (const auto& [a, b] : edges) {
      require(a >= 0 && b >= 0 && a < size() && b < size(), "edge references unknown district");
      require(a != b, "self-loop on district " + ids_[static_cast<std::size_t>(a)]);
      neighbours_[static_cast<std::size_t>(a)].push_back(b);
      neighbours_[static_cast<std::size_t>(b)].push_back(a);
    }
    for (auto& nb : neighbours_) {
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
  }

  Index size() const { return static_cast<Index>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id(Index i) const { return ids_.at(static_cast<std::size_t>(i)); }
  const std::vector<Index>& neighbours(Index i) const { return neighbours_.at(static_cast<std::size_t>(i)); }
  double elevation_m(Index i) const { return elevation_m_.at(static_cast<std::size_t>(i)); }
  double elevation_km(Index i) const { return elevation_m(i) / 1000.0; }
  const Point2& centroid(Index i) const { return centroids_.at(static_cast<std::size_t>(i)); }

  std::optional<Index> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  Index index_of(const std::string& id) const {
    auto i = find(id);
    require(i.has_value(), "unknown district id: " + id);
    return *i;
  }

  bool adjacent(Index a, Index b) const {
    const auto& nb = neighbours(a);
    return std::binary_search(nb.begin(), nb.end(), b);
  }

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& nb : neighbours_) n += nb.size();
    return n / 2;
  }

  /// Component label per district, labels numbered in order of first vertex.
  std::vector<Index> component_labels() const {
    std::vector<Index> label(ids_.size(), -1);
    Index next = 0;
    for (Index s = 0; s < size(); ++s) {
      if (label[static_cast<std::size_t>(s)] >= 0) continue;
      std::queue<Index> q;
      q.push(s);
      label[static_cast<std::size_t>(s)] = next;
      while (!q.empty()) {
        const Index v = q.front();
        q.pop();
        for (Index w : neighbours(v)) {
          if (label[static_cast<std::size_t>(w)] < 0) {
            label[static_cast<std::size_t>(w)] = next;
            q.push(w);
          }
        }
      }
      ++next;
    }
    return label;
  }

  Index component_count() const {
    const auto labels = component_labels();
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  }

 private:
  std::vector<std::string> ids_;
  std::map<std::string, Index> index_;
  std::vector<std::vector<Index>> neighbours_;
  std::vector<double> elevation_m_;
  std::vector<Point2> centroids_;
};

/// rows x cols rook-adjacency lattice with unit spacing scaled by `spacing_km`.
/// Ids are "D<row>_<col>".
inline DistrictGraph lattice_graph(Index rows, Index cols, std::vector<double> elevation_m = {},
                                   double spacing_km = 10.0) {
  require(rows >= 1 && cols >= 1, "lattice needs positive dimensions");
  std::vector<std::string> ids;
  std::vector<Point2> centroids;
  std::vector<std::pair<Index, Index>> edges;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      ids.push_back("D" + std::to_string(r) + "_" + std::to_string(c));
      centroids.push_back({static_cast<double>(c) * spacing_km, static_cast<double>(r) * spacing_km});
      const Index v = r * cols + c;
      if (c + 1 < cols) edges.emplace_back(v, v + 1);
      if (r + 1 < rows) edges.emplace_back(v, v + cols);
    }
  }
  if (elevation_m.empty()) elevation_m.assign(ids.size(), 500.0);
  return DistrictGraph(std::move(ids), edges, std::move(elevation_m), std::move(centroids));
}

/// Reads a tab-separated edge list (`district_id_a<TAB>district_id_b`) and a
/// district attribute CSV (`district_id,elevation_m,centroid_x_km,centroid_y_km`).
/// Districts are ordered as they appear in the attribute file.
inline DistrictGraph load_district_graph(const std::string& edge_path, const std::string& attribute_path) {
  const CsvTable attrs = read_csv(attribute_path);
  attrs.require_columns({"district_id", "elevation_m", "centroid_x_km", "centroid_y_km"});
  std::vector<std::string> ids;
  std::vector<double> elev;
  std::vector<Point2> centroids;
  for (std::size_t r = 0; r < attrs.rows.size(); ++r) {
    ids.push_back(attrs.get(r, "district_id"));
    elev.push_back(attrs.number(r, "elevation_m"));
    centroids.push_back({attrs.number(r, "centroid_x_km"), attrs.number(r, "centroid_y_km")});
  }
  std::map<std::string, Index> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = static_cast<Index>(i);

  std::vector<std::pair<Index, Index>> edges;
  const auto lines = read_lines(edge_path);
  for (const auto& [lineno, line] : lines) {
    const auto fields = split(line, '\t');
    if (fields.size() != 2)
      throw ValidationError(edge_path + ":" + std::to_string(lineno) + ": expected two tab-separated district ids");
    auto a = index.find(trim(fields[0]));
    auto b = index.find(trim(fields[1]));
    if (a == index.end() || b == index.end())
      throw ValidationError(edge_path + ":" + std::to_string(lineno) + ": unknown district id");
    edges.emplace_back(a->second, b->second);
  }
  return DistrictGraph(std::move(ids), edges, std::move(elev), std::move(centroids));
}

inline void write_district_graph(const DistrictGraph& g, const std::string& edge_path,
                                 const std::string& attribute_path) {
  std::string edges;
  for (Index i = 0; i < g.size(); ++i)
    for (Index j : g.neighbours(i))
      if (i < j) edges += g.id(i) + "\t" + g.id(j) + "\n";
  write_file_atomic(edge_path, edges);
  std::string attrs = "district_id,elevation_m,centroid_x_km,centroid_y_km\n";
  for (Index i = 0; i < g.size(); ++i)
    attrs += g.id(i) + "," + format_number(g.elevation_m(i)) + "," + format_number(g.centroid(i).x_km) + "," +
             format_number(g.centroid(i).y_km) + "\n";
  write_file_atomic(attribute_path, attrs);
}

/// Checks a dense 0/1 adjacency for symmetry and an empty diagonal, then
/// converts it to an edge list.
inline std::vector<std::pair<Index, Index>> edges_from_adjacency(const Eigen::MatrixXi& adj) {
  require(adj.rows() > 0 && adj.rows() == adj.cols(), "adjacency must be a non-empty square matrix");
  std::vector<std::pair<Index, Index>> edges;
  for (Index i = 0; i < adj.rows(); ++i) {
    require(adj(i, i) == 0, "adjacency must be irreflexive");
    for (Index j = 0; j < adj.cols(); ++j) {
      require(adj(i, j) == adj(j, i), "adjacency must be symmetric");
      if (i < j && adj(i, j) != 0) edges.emplace_back(i, j);
    }
  }
  return edges;
}

/// ICAR structure matrix: neighbour counts on the diagonal, -1 per edge.
/// The null space is spanned by the normalized component indicators.
inline PrecisionStructure build_spatial_structure(const DistrictGraph& graph) {
  require(graph.size() > 0, "district graph is empty");
  const Index n = graph.size();
  std::vector<Triplet> t;
  for (Index i = 0; i < n; ++i) {
    const auto& nb = graph.neighbours(i);
    t.emplace_back(i, i, static_cast<double>(nb.size()));
    for (Index j : nb) {
      require(graph.adjacent(j, i), "adjacency is not symmetric");
      t.emplace_back(i, j, -1.0);
    }
  }
  PrecisionStructure s;
  s.matrix.resize(n, n);
  s.matrix.setFromTriplets(t.begin(), t.end());

  const auto labels = graph.component_labels();
  const Index k = graph.component_count();
  s.rank_deficiency = k;
  s.null_basis = Matrix::Zero(n, k);
  for (Index i = 0; i < n; ++i) s.null_basis(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  for (Index c = 0; c < k; ++c) s.null_basis.col(c).normalize();
  return s;
}

/// Leroux precision tau * (lambda * R + (1 - lambda) * I). Full rank for
/// lambda < 1; at lambda = 1 it inherits the structure's null space.
inline PrecisionStructure leroux_precision(const PrecisionStructure& structure, double lambda, double tau) {
  require(std::isfinite(lambda) && lambda >= 0.0 && lambda <= 1.0, "Leroux lambda must lie in [0, 1]");
  require(std::isfinite(tau) && tau > 0.0, "precision tau must be positive");
  PrecisionStructure out;
  out.matrix = tau * (lambda * structure.matrix + (1.0 - lambda) * identity(structure.dim()));
  if (lambda == 1.0) {
    out.rank_deficiency = structure.rank_deficiency;
    out.null_basis = structure.null_basis;
  } else {
    out.rank_deficiency = 0;
    out.null_basis = Matrix(structure.dim(), 0);
  }
  return out;
}

}  // namespace stmort
