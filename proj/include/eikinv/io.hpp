#pragma once

// File formats: mesh/metric/torso JSON, sites/activation/ECG CSV, the binary
// lead-field operator, lead-field CSV import, run configuration and reports.

#include "eikinv/common.hpp"
#include "eikinv/ecg.hpp"
#include "eikinv/eikonal.hpp"
#include "eikinv/inverse.hpp"
#include "eikinv/leadfield.hpp"
#include "eikinv/mesh.hpp"

#include <json.hpp>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace eikinv {

using Json = nlohmann::json;

/// Shortest decimal that round-trips; "inf", "-inf" and "nan" for non-finite values.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError(where + ": cannot parse number '" + std::string(s) + "'");
  return x;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline Json read_json(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

// ---- CSV ----------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return static_cast<int>(c);
    return -1;
  }
};

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Comma-separated table with a header row. Blank lines and lines starting with '#' are skipped.
inline CsvTable parse_csv(const std::string& text, const std::string& where) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(trim(cell));
    if (line.back() == ',') cells.emplace_back();
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError(where + ": row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (!have_header) throw ParseError(where + ": empty CSV (no header row)");
  return t;
}

inline CsvTable read_csv(const std::string& path) { return parse_csv(read_text(path), path); }

// ---- mesh and tensor fields ---------------------------------------------

namespace detail {

inline const Json& require(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing key '" + key + "'");
  return j.at(key);
}

template <class T>
T get_as(const Json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const Json::exception& e) {
    throw ParseError(what + ": " + e.what());
  }
}

inline std::vector<MatrixXd> tensors_from_json(const Json& arr, int d, const std::string& where) {
  if (!arr.is_array()) throw ParseError(where + ": tensor list must be an array");
  std::vector<MatrixXd> out;
  out.reserve(arr.size());
  for (std::size_t j = 0; j < arr.size(); ++j) {
    const auto upper = get_as<std::vector<double>>(arr[j], where + " entry " + std::to_string(j));
    if (static_cast<int>(upper.size()) != sym_size(d))
      throw ParseError(where + " entry " + std::to_string(j) + ": expected " + std::to_string(sym_size(d)) +
                       " upper-triangular values, got " + std::to_string(upper.size()));
    out.push_back(unpack_symmetric(upper, d));
  }
  return out;
}

inline Json tensors_to_json(const std::vector<MatrixXd>& ts) {
  Json arr = Json::array();
  for (const MatrixXd& t : ts) arr.push_back(pack_symmetric(t));
  return arr;
}

}  // namespace detail

struct MeshBundle {
  Mesh mesh;
  std::optional<MetricField> metric;  // present when the file carries "metric"
};

/// Parses and validates the mesh JSON ({"dim", "vertices", "elements", ["metric"], ["labels"]}).
inline MeshBundle mesh_from_json(const Json& j, const std::string& where) {
  MeshBundle b;
  Mesh& m = b.mesh;
  m.dim = detail::get_as<int>(detail::require(j, "dim", where), where + " dim");
  if (m.dim < 2) throw MeshError(where + ": mesh dimension must be >= 2, got " + std::to_string(m.dim));
  const auto verts =
      detail::get_as<std::vector<std::vector<double>>>(detail::require(j, "vertices", where), where + " vertices");
  const auto elems =
      detail::get_as<std::vector<std::vector<int>>>(detail::require(j, "elements", where), where + " elements");
  m.vertices.resize(m.dim, static_cast<Index>(verts.size()));
  for (std::size_t v = 0; v < verts.size(); ++v) {
    if (static_cast<int>(verts[v].size()) != m.dim)
      throw MeshError(where + ": vertex " + std::to_string(v) + " has " + std::to_string(verts[v].size()) +
                      " coordinates, expected " + std::to_string(m.dim));
    for (int c = 0; c < m.dim; ++c) m.vertices(c, static_cast<Index>(v)) = verts[v][static_cast<std::size_t>(c)];
  }
  m.elements.resize(m.dim + 1, static_cast<Index>(elems.size()));
  for (std::size_t e = 0; e < elems.size(); ++e) {
    if (static_cast<int>(elems[e].size()) != m.dim + 1)
      throw MeshError(where + ": element " + std::to_string(e) + " has " + std::to_string(elems[e].size()) +
                      " vertices, expected " + std::to_string(m.dim + 1));
    for (int c = 0; c <= m.dim; ++c) m.elements(c, static_cast<Index>(e)) = elems[e][static_cast<std::size_t>(c)];
  }
  if (j.contains("labels")) m.labels = detail::get_as<std::vector<int>>(j.at("labels"), where + " labels");
  validate_mesh(m);
  if (j.contains("metric")) {
    MetricField mf{detail::tensors_from_json(j.at("metric"), m.dim, where + " metric")};
    validate_metric(m, mf);
    b.metric = std::move(mf);
  }
  return b;
}

inline MeshBundle load_mesh_bundle(const std::string& path) {
  try {
    return mesh_from_json(read_json(path), path);
  } catch (const MeshError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path, 0) == 0) throw;
    throw MeshError(path + ": " + msg);
  }
}

inline Mesh load_mesh(const std::string& path) { return load_mesh_bundle(path).mesh; }

/// Metric from a separate file: {"metric": [...]} (a full mesh file also works).
inline MetricField load_metric(const std::string& path, const Mesh& mesh) {
  const Json j = read_json(path);
  MetricField mf{detail::tensors_from_json(detail::require(j, "metric", path), mesh.dim, path + " metric")};
  try {
    validate_metric(mesh, mf);
  } catch (const MeshError& e) {
    throw MeshError(path + ": " + e.what());
  }
  return mf;
}

inline Json mesh_to_json(const Mesh& m, const MetricField* metric = nullptr) {
  Json j;
  j["dim"] = m.dim;
  Json vs = Json::array();
  for (Index v = 0; v < m.n_vertices(); ++v) {
    std::vector<double> p(static_cast<std::size_t>(m.dim));
    for (int c = 0; c < m.dim; ++c) p[static_cast<std::size_t>(c)] = m.vertices(c, v);
    vs.push_back(p);
  }
  j["vertices"] = std::move(vs);
  Json es = Json::array();
  for (Index e = 0; e < m.n_elements(); ++e) {
    std::vector<int> ids(static_cast<std::size_t>(m.dim + 1));
    for (int c = 0; c <= m.dim; ++c) ids[static_cast<std::size_t>(c)] = m.elements(c, e);
    es.push_back(ids);
  }
  j["elements"] = std::move(es);
  if (metric) j["metric"] = detail::tensors_to_json(metric->tensors);
  if (!m.labels.empty()) j["labels"] = m.labels;
  return j;
}

inline void save_mesh(const std::string& path, const Mesh& m, const MetricField* metric = nullptr) {
  write_text(path, mesh_to_json(m, metric).dump() + "\n");
}

// ---- torso --------------------------------------------------------------

/// Torso JSON: mesh keys plus "bulk" and "intracellular" tensors per element (S/m),
/// "heart_label", "electrodes": [{"name", "position"}], "wct" and "leads" as electrode names.
inline TorsoModel torso_from_json(const Json& j, const std::string& where) {
  TorsoModel t;
  Json mesh_part = j;
  mesh_part.erase("metric");
  t.mesh = mesh_from_json(mesh_part, where).mesh;
  const int d = t.mesh.dim;
  t.bulk = detail::tensors_from_json(detail::require(j, "bulk", where), d, where + " bulk");
  t.intracellular = detail::tensors_from_json(detail::require(j, "intracellular", where), d, where + " intracellular");
  if (j.contains("heart_label")) t.heart_label = detail::get_as<int>(j.at("heart_label"), where + " heart_label");
  const Json& el = detail::require(j, "electrodes", where);
  if (!el.is_array()) throw ParseError(where + ": electrodes must be an array");
  for (const Json& e : el) {
    t.electrode_names.push_back(detail::get_as<std::string>(detail::require(e, "name", where), where + " electrode name"));
    const auto p = detail::get_as<std::vector<double>>(detail::require(e, "position", where), where + " electrode");
    if (static_cast<int>(p.size()) != d) throw ParseError(where + ": electrode position has wrong dimension");
    t.electrodes.push_back(Eigen::Map<const VectorXd>(p.data(), d));
  }
  auto by_name = [&](const std::string& key) {
    std::vector<int> ids;
    for (const auto& n : detail::get_as<std::vector<std::string>>(detail::require(j, key.c_str(), where), where + " " + key)) {
      const auto it = std::find(t.electrode_names.begin(), t.electrode_names.end(), n);
      if (it == t.electrode_names.end()) throw ParseError(where + ": " + key + " names unknown electrode '" + n + "'");
      ids.push_back(static_cast<int>(it - t.electrode_names.begin()));
    }
    return ids;
  };
  t.wct = by_name("wct");
  t.leads = by_name("leads");
  validate_torso(t);
  return t;
}

inline TorsoModel load_torso(const std::string& path) { return torso_from_json(read_json(path), path); }

inline Json torso_to_json(const TorsoModel& t) {
  Json j = mesh_to_json(t.mesh);
  j["bulk"] = detail::tensors_to_json(t.bulk);
  j["intracellular"] = detail::tensors_to_json(t.intracellular);
  j["heart_label"] = t.heart_label;
  Json el = Json::array();
  for (std::size_t e = 0; e < t.electrodes.size(); ++e) {
    std::vector<double> p(t.electrodes[e].data(), t.electrodes[e].data() + t.electrodes[e].size());
    el.push_back({{"name", t.electrode_names[e]}, {"position", p}});
  }
  j["electrodes"] = std::move(el);
  std::vector<std::string> wct, leads;
  for (int e : t.wct) wct.push_back(t.electrode_names[static_cast<std::size_t>(e)]);
  for (int e : t.leads) leads.push_back(t.electrode_names[static_cast<std::size_t>(e)]);
  j["wct"] = wct;
  j["leads"] = leads;
  return j;
}

inline void save_torso(const std::string& path, const TorsoModel& t) { write_text(path, torso_to_json(t).dump() + "\n"); }

/// Per-element tensors from {"<key>": [...]}, e.g. intracellular conductivity for a heart mesh.
inline std::vector<MatrixXd> load_tensor_field(const std::string& path, const char* key, int d) {
  const Json j = read_json(path);
  return detail::tensors_from_json(detail::require(j, key, path), d, path + " " + key);
}

// ---- sites --------------------------------------------------------------

inline const char* kCoordinateNames[] = {"x", "y", "z"};

/// Sites CSV with header x,y[,z],t and optional active and mode columns.
inline SiteSet parse_sites_csv(const CsvTable& t, const std::string& where, SiteMode default_mode) {
  int d = 0;
  while (d < 3 && t.column(kCoordinateNames[d]) == d) ++d;
  if (d < 2) throw ParseError(where + ": sites CSV must start with columns x,y[,z]");
  const int tc = t.column("t");
  if (tc < 0) throw ParseError(where + ": sites CSV needs a 't' column");
  const int mc = t.column("mode");
  if (t.rows.empty()) throw ParseError(where + ": no sites");
  SiteSet out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string at = where + " row " + std::to_string(r + 1);
    Site s;
    s.x.resize(d);
    for (int c = 0; c < d; ++c) s.x(c) = parse_double(t.rows[r][static_cast<std::size_t>(c)], at);
    s.t = parse_double(t.rows[r][static_cast<std::size_t>(tc)], at);
    s.mode = mc >= 0 ? site_mode_from_string(t.rows[r][static_cast<std::size_t>(mc)]) : default_mode;
    if (!s.x.allFinite() || !std::isfinite(s.t)) throw ParseError(at + ": non-finite site");
    out.push_back(std::move(s));
  }
  return out;
}

inline SiteSet load_sites(const std::string& path, SiteMode default_mode = SiteMode::volume) {
  return parse_sites_csv(read_csv(path), path, default_mode);
}

inline std::string sites_csv(const SiteSet& sites, const std::vector<bool>* active = nullptr) {
  if (sites.empty()) return "";
  const auto d = sites.front().x.size();
  std::string s;
  for (Index c = 0; c < d; ++c) s += std::string(kCoordinateNames[c]) + ",";
  s += "t,mode";
  if (active) s += ",active";
  s += "\n";
  for (std::size_t i = 0; i < sites.size(); ++i) {
    for (Index c = 0; c < d; ++c) s += format_double(sites[i].x(c)) + ",";
    s += format_double(sites[i].t) + "," + to_string(sites[i].mode);
    if (active) s += (*active)[i] ? ",1" : ",0";
    s += "\n";
  }
  return s;
}

inline void save_sites(const std::string& path, const SiteSet& sites, const std::vector<bool>* active = nullptr) {
  write_text(path, sites_csv(sites, active));
}

// ---- activation ---------------------------------------------------------

inline std::string activation_csv(const VectorXd& phi) {
  std::string s = "vertex_id,phi_ms\n";
  for (Index v = 0; v < phi.size(); ++v) s += std::to_string(v) + "," + format_double(phi(v)) + "\n";
  return s;
}

inline VectorXd load_activation(const std::string& path) {
  const CsvTable t = read_csv(path);
  const int ic = t.column("vertex_id"), pc = t.column("phi_ms");
  if (ic < 0 || pc < 0) throw ParseError(path + ": activation CSV needs columns vertex_id,phi_ms");
  VectorXd phi(static_cast<Index>(t.rows.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string at = path + " row " + std::to_string(r + 1);
    if (parse_double(t.rows[r][static_cast<std::size_t>(ic)], at) != static_cast<double>(r))
      throw ParseError(at + ": vertex ids must be 0, 1, 2, ... in order");
    phi(static_cast<Index>(r)) = parse_double(t.rows[r][static_cast<std::size_t>(pc)], at);
  }
  return phi;
}

inline Json activation_diagnostics(const ActivationField& f, const EikonalOptions& eik, int n_f_used) {
  Index unreached = 0;
  for (Index v = 0; v < f.phi.size(); ++v) unreached += std::isfinite(f.phi(v)) ? 0 : 1;
  return Json{{"converged", f.converged},
              {"iterations", f.iterations},
              {"last_max_decrease_ms", std::isfinite(f.last_max_decrease) ? Json(f.last_max_decrease) : Json(nullptr)},
              {"local_solves", f.local_solves},
              {"vertices", f.phi.size()},
              {"unreached", unreached},
              {"epsilon_ms", eik.epsilon},
              {"n_f", n_f_used}};
}

// ---- ECG ----------------------------------------------------------------

inline std::string ecg_csv(const EcgTrace& tr) {
  std::string s = "time_ms";
  for (const auto& n : tr.names) s += "," + n;
  s += "\n";
  for (Index k = 0; k < tr.grid.n; ++k) {
    s += format_double(tr.grid.time(k));
    for (Index l = 0; l < tr.n_leads(); ++l) s += "," + format_double(tr.values(l, k));
    s += "\n";
  }
  return s;
}

inline void save_ecg(const std::string& path, const EcgTrace& tr) { write_text(path, ecg_csv(tr)); }

/// ECG CSV (time_ms, one column per lead). Sample times must be uniformly spaced.
inline EcgTrace load_ecg(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header[0] != "time_ms") throw ParseError(path + ": first ECG column must be time_ms");
  if (t.header.size() < 2) throw ParseError(path + ": ECG has no lead columns");
  if (t.rows.size() < 2) throw ParseError(path + ": ECG needs at least two samples");
  EcgTrace tr;
  tr.names.assign(t.header.begin() + 1, t.header.end());
  const auto n = static_cast<Index>(t.rows.size());
  tr.values.resize(static_cast<Index>(tr.names.size()), n);
  std::vector<double> times(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) {
    const auto& row = t.rows[static_cast<std::size_t>(k)];
    const std::string at = path + " row " + std::to_string(k + 1);
    times[static_cast<std::size_t>(k)] = parse_double(row[0], at);
    for (Index l = 0; l < tr.n_leads(); ++l) tr.values(l, k) = parse_double(row[static_cast<std::size_t>(l + 1)], at);
  }
  const double dt = (times.back() - times.front()) / static_cast<double>(n - 1);
  if (!(dt > 0.0)) throw ParseError(path + ": sample times must increase");
  for (Index k = 0; k < n; ++k)
    if (std::abs(times[static_cast<std::size_t>(k)] - (times.front() + static_cast<double>(k) * dt)) > 1e-6 * dt)
      throw ParseError(path + ": sample times are not uniformly spaced (row " + std::to_string(k + 1) + ")");
  tr.grid = TimeGrid{times.front(), dt, n};
  return tr;
}

// ---- lead-field operator ------------------------------------------------

/// Binary operator file: one JSON header line {"leads", "vertices", "names"},
/// then leads x vertices float64 little-endian, row-major.
inline void save_operator(const std::string& path, const LeadFieldOperator& op) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const Json hdr{{"leads", op.n_leads()}, {"vertices", op.n_vertices()}, {"names", op.names}};
  out << hdr.dump() << "\n";
  std::vector<char> buf(static_cast<std::size_t>(op.n_vertices()) * 8);
  for (Index l = 0; l < op.n_leads(); ++l) {
    for (Index v = 0; v < op.n_vertices(); ++v) {
      auto bits = std::bit_cast<std::uint64_t>(op.B(l, v));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      std::memcpy(buf.data() + static_cast<std::size_t>(v) * 8, &bits, 8);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline LeadFieldOperator load_operator(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": missing header line");
  Json hdr;
  try {
    hdr = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw ParseError(path + ": bad header: " + e.what());
  }
  const auto N = detail::get_as<Index>(detail::require(hdr, "leads", path), path + " leads");
  const auto nv = detail::get_as<Index>(detail::require(hdr, "vertices", path), path + " vertices");
  LeadFieldOperator op;
  op.names = detail::get_as<std::vector<std::string>>(detail::require(hdr, "names", path), path + " names");
  if (N < 1 || nv < 1 || static_cast<Index>(op.names.size()) != N)
    throw ParseError(path + ": inconsistent header (leads, vertices, names)");
  op.B.resize(N, nv);
  std::vector<char> buf(static_cast<std::size_t>(nv) * 8);
  for (Index l = 0; l < N; ++l) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
      throw ParseError(path + ": truncated payload (lead " + std::to_string(l) + ")");
    for (Index v = 0; v < nv; ++v) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, buf.data() + static_cast<std::size_t>(v) * 8, 8);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      op.B(l, v) = std::bit_cast<double>(bits);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(path + ": trailing bytes after payload");
  return op;
}

/// Externally computed nodal lead fields: header of lead names (an optional
/// leading vertex_id column is checked and dropped), one row per vertex.
struct ImportedLeadFields {
  std::vector<std::string> names;
  MatrixXd Z;  // n_v x N
};

inline ImportedLeadFields load_lead_field_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  const bool has_id = !t.header.empty() && t.header[0] == "vertex_id";
  const std::size_t first = has_id ? 1 : 0;
  if (t.header.size() <= first) throw ParseError(path + ": no lead columns");
  if (t.rows.empty()) throw ParseError(path + ": no vertices");
  ImportedLeadFields out;
  out.names.assign(t.header.begin() + static_cast<std::ptrdiff_t>(first), t.header.end());
  out.Z.resize(static_cast<Index>(t.rows.size()), static_cast<Index>(out.names.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string at = path + " row " + std::to_string(r + 1);
    if (has_id && parse_double(t.rows[r][0], at) != static_cast<double>(r))
      throw ParseError(at + ": vertex ids must be 0, 1, 2, ... in order");
    for (std::size_t c = first; c < t.header.size(); ++c)
      out.Z(static_cast<Index>(r), static_cast<Index>(c - first)) = parse_double(t.rows[r][c], at);
  }
  if (!out.Z.allFinite()) throw ParseError(path + ": non-finite lead-field value");
  return out;
}

// ---- run configuration and report --------------------------------------

struct RunConfig {
  std::string mesh, metric, leadfield, target_ecg;  // paths, resolved against the config's directory
  std::string init_sites;                           // optional sites CSV replacing random initialisation
  std::optional<std::array<double, 2>> window;      // ms; default: the target's span
  double dt = 0.5;                                  // ms
  InitOptions sites;
  AdamOptions adam;
  Index epochs = 400;
  EikonalOptions eikonal;
  ApTemplate tpl;
};

namespace detail {

inline void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ParseError(where + ": unknown key '" + k + "'");
}

inline std::string resolve(const std::string& base_dir, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (std::filesystem::path(base_dir) / path).lexically_normal().string();
}

}  // namespace detail

inline RunConfig run_config_from_json(const Json& j, const std::string& where, const std::string& base_dir) {
  using detail::get_as;
  detail::check_keys(j,
                     {"mesh", "metric", "leadfield", "target_ecg", "init_sites", "window", "dt", "sites", "adam",
                      "epochs", "eikonal", "template"},
                     where);
  RunConfig c;
  auto path = [&](const char* k, bool required) {
    if (!j.contains(k)) {
      if (required) throw ParseError(where + ": missing key '" + k + "'");
      return std::string();
    }
    return detail::resolve(base_dir, get_as<std::string>(j.at(k), where + " " + k));
  };
  c.mesh = path("mesh", true);
  c.metric = path("metric", false);
  c.leadfield = path("leadfield", true);
  c.target_ecg = path("target_ecg", true);
  c.init_sites = path("init_sites", false);
  if (j.contains("window")) {
    const auto w = get_as<std::vector<double>>(j.at("window"), where + " window");
    if (w.size() != 2) throw ParseError(where + ": window must be [t_start_ms, t_end_ms]");
    c.window = std::array<double, 2>{w[0], w[1]};
  }
  if (j.contains("dt")) c.dt = get_as<double>(j.at("dt"), where + " dt");
  if (j.contains("epochs")) c.epochs = get_as<Index>(j.at("epochs"), where + " epochs");
  if (j.contains("sites")) {
    const Json& s = j.at("sites");
    detail::check_keys(s, {"K", "mode", "t_init", "seed"}, where + " sites");
    if (s.contains("K")) c.sites.K = get_as<Index>(s.at("K"), where + " sites.K");
    if (s.contains("mode")) c.sites.mode = site_mode_from_string(get_as<std::string>(s.at("mode"), where + " sites.mode"));
    if (s.contains("t_init")) c.sites.t_init = get_as<double>(s.at("t_init"), where + " sites.t_init");
    if (s.contains("seed")) c.sites.seed = get_as<std::uint64_t>(s.at("seed"), where + " sites.seed");
  }
  if (j.contains("adam")) {
    const Json& a = j.at("adam");
    detail::check_keys(a, {"lr", "beta1", "beta2", "epsilon", "lr_position", "lr_time"}, where + " adam");
    if (a.contains("lr")) c.adam.lr = get_as<double>(a.at("lr"), where + " adam.lr");
    if (a.contains("beta1")) c.adam.beta1 = get_as<double>(a.at("beta1"), where + " adam.beta1");
    if (a.contains("beta2")) c.adam.beta2 = get_as<double>(a.at("beta2"), where + " adam.beta2");
    if (a.contains("epsilon")) c.adam.epsilon = get_as<double>(a.at("epsilon"), where + " adam.epsilon");
    if (a.contains("lr_position")) c.adam.lr_position = get_as<double>(a.at("lr_position"), where + " adam.lr_position");
    if (a.contains("lr_time")) c.adam.lr_time = get_as<double>(a.at("lr_time"), where + " adam.lr_time");
  }
  if (j.contains("eikonal")) {
    const Json& e = j.at("eikonal");
    detail::check_keys(e, {"epsilon_ms", "n_f", "max_iters"}, where + " eikonal");
    if (e.contains("epsilon_ms")) c.eikonal.epsilon = get_as<double>(e.at("epsilon_ms"), where + " eikonal.epsilon_ms");
    if (e.contains("n_f")) c.eikonal.n_f = get_as<int>(e.at("n_f"), where + " eikonal.n_f");
    if (e.contains("max_iters")) c.eikonal.max_iters = get_as<Index>(e.at("max_iters"), where + " eikonal.max_iters");
  }
  if (j.contains("template")) {
    const Json& t = j.at("template");
    detail::check_keys(t, {"K0", "K1", "tau", "convention"}, where + " template");
    if (t.contains("K0")) c.tpl.K0 = get_as<double>(t.at("K0"), where + " template.K0");
    if (t.contains("K1")) c.tpl.K1 = get_as<double>(t.at("K1"), where + " template.K1");
    if (t.contains("tau")) c.tpl.tau = get_as<double>(t.at("tau"), where + " template.tau");
    if (t.contains("convention"))
      c.tpl.convention = template_convention_from_string(get_as<std::string>(t.at("convention"), where + " template.convention"));
  }
  if (c.epochs < 0) throw ParseError(where + ": epochs must be >= 0");
  if (!(c.dt > 0.0)) throw ParseError(where + ": dt must be positive");
  if (!(c.eikonal.epsilon > 0.0)) throw ParseError(where + ": eikonal.epsilon_ms must be positive");
  if (c.eikonal.n_f < 0) throw ParseError(where + ": eikonal.n_f must be >= 0");
  c.tpl.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  const std::string dir = std::filesystem::path(path).parent_path().string();
  return run_config_from_json(read_json(path), path, dir.empty() ? "." : dir);
}

inline Json run_config_to_json(const RunConfig& c) {
  Json j{{"mesh", c.mesh},
         {"leadfield", c.leadfield},
         {"target_ecg", c.target_ecg},
         {"dt", c.dt},
         {"epochs", c.epochs},
         {"sites", {{"K", c.sites.K}, {"mode", to_string(c.sites.mode)}, {"t_init", c.sites.t_init}, {"seed", c.sites.seed}}},
         {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
         {"eikonal", {{"epsilon_ms", c.eikonal.epsilon}, {"n_f", c.eikonal.n_f}}},
         {"template", {{"K0", c.tpl.K0}, {"K1", c.tpl.K1}, {"tau", c.tpl.tau}, {"convention", to_string(c.tpl.convention)}}}};
  if (!c.metric.empty()) j["metric"] = c.metric;
  if (!c.init_sites.empty()) j["init_sites"] = c.init_sites;
  if (c.window) j["window"] = {(*c.window)[0], (*c.window)[1]};
  if (!std::isnan(c.adam.lr_position)) j["adam"]["lr_position"] = c.adam.lr_position;
  if (!std::isnan(c.adam.lr_time)) j["adam"]["lr_time"] = c.adam.lr_time;
  return j;
}

inline Json finite_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

/// RunReport as JSON. Wall-clock time is left out unless asked for, so reruns compare byte for byte.
inline Json run_report_json(const FitResult& r, bool include_wall_clock, bool include_trajectory) {
  const RunReport& rep = r.report;
  Json loss = Json::array();
  for (double l : rep.loss) loss.push_back(finite_or_null(l));
  Json j{{"epochs_run", rep.epochs_run},
         {"loss", std::move(loss)},
         {"active", rep.active},
         {"initial_loss", finite_or_null(rep.initial_loss)},
         {"final_loss", finite_or_null(rep.final_loss)},
         {"final_active", rep.final_active},
         {"early_stopped", rep.early_stopped},
         {"aborted", rep.aborted},
         {"abort_epoch", rep.abort_epoch},
         {"message", rep.message},
         {"dropped_edges", rep.dropped_edges}};
  Json sites = Json::array();
  for (std::size_t i = 0; i < r.sites.size(); ++i) {
    const Site& s = r.sites[i];
    sites.push_back({{"x", std::vector<double>(s.x.data(), s.x.data() + s.x.size())},
                     {"t", s.t},
                     {"mode", to_string(s.mode)},
                     {"active", i < r.active.size() ? Json(static_cast<bool>(r.active[i])) : Json(nullptr)}});
  }
  j["sites"] = std::move(sites);
  if (include_trajectory) {
    Json tr = Json::array();
    for (const VectorXd& p : rep.trajectory) tr.push_back(std::vector<double>(p.data(), p.data() + p.size()));
    j["trajectory"] = std::move(tr);
  }
  if (include_wall_clock) j["wall_clock_s"] = rep.wall_clock_s;
  return j;
}

}  // namespace eikinv
