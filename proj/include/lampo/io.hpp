#ifndef LAMPO_IO_HPP
#define LAMPO_IO_HPP

// File formats:
//   model file   - one JSON document: format tag, version, dims, mixture weights,
//                  per-component arrays (matrices row-major) and a policy section.
//   policy lines - one JSON object per line with the flat policy arrays.
//   dataset      - one JSON object per line: {"context": [...], "cluster": k,
//                  "trajectory": [[t, q1, ..., qd], ...]}.
// Doubles are written in shortest round-trip form, so reading back is bit-exact.

#include "lampo/common.hpp"
#include "lampo/latent_policy.hpp"
#include "lampo/mppca.hpp"
#include "lampo/promp.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace lampo::io {

using nlohmann::json;

inline constexpr std::string_view kModelFormat = "lampo-mppca";
inline constexpr std::string_view kPolicyFormat = "lampo-policy";
inline constexpr int kFormatVersion = 1;

inline json vector_json(const Eigen::Ref<const VectorXd>& v) { return to_std(v); }

/// Row-major flattening.
inline json matrix_json(const Eigen::Ref<const MatrixXd>& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

inline VectorXd read_vector(const json& j, Eigen::Index expected, const char* what) {
  require(j.is_array(), ErrorKind::Format, std::string(what) + " must be an array");
  const auto v = j.get<std::vector<double>>();
  require(expected < 0 || static_cast<Eigen::Index>(v.size()) == expected, ErrorKind::Format,
          std::string(what) + " has the wrong length");
  return from_std(v);
}

inline MatrixXd read_matrix(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  const VectorXd flat = read_vector(j, rows * cols, what);
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat(r * cols + c);
  return m;
}

inline json policy_json(const PolicyParams& theta) {
  return {{"logits", vector_json(theta.logits)},
          {"mu", matrix_json(theta.mu.transpose())},  // K rows of d_z
          {"log_var", matrix_json(theta.log_var.transpose())}};
}

inline PolicyParams policy_from_json(const json& j, int n_components, Eigen::Index latent_dim) {
  PolicyParams p;
  p.logits = read_vector(j.at("logits"), n_components, "policy.logits");
  p.mu = read_matrix(j.at("mu"), n_components, latent_dim, "policy.mu").transpose();
  p.log_var = read_matrix(j.at("log_var"), n_components, latent_dim, "policy.log_var").transpose();
  p.validate();
  return p;
}

inline json basis_json(const BasisConfig& b) {
  json j = {{"n_basis", b.n_basis}, {"ridge_lambda", b.ridge_lambda}};
  j["width"] = b.width ? json(*b.width) : json(nullptr);
  return j;
}

inline json model_json(const MppcaModel& model, const PolicyParams& theta, const BasisConfig& basis) {
  json comps = json::array();
  for (const auto& c : model.components) {
    comps.push_back({{"omega_loading", matrix_json(c.omega_loading)},
                     {"omega_offset", vector_json(c.omega_offset)},
                     {"context_loading", matrix_json(c.context_loading)},
                     {"context_offset", vector_json(c.context_offset)},
                     {"noise_var", c.noise_var},
                     {"latent_mean", vector_json(c.latent_mean)},
                     {"latent_var", vector_json(c.latent_var)}});
  }
  return {{"format", kModelFormat},
          {"version", kFormatVersion},
          {"dims",
           {{"K", model.n_components()},
            {"m", model.movement_dim()},
            {"d_c", model.context_dim()},
            {"d_z", model.latent_dim()}}},
          {"basis", basis_json(basis)},
          {"weights", vector_json(model.weights)},
          {"components", comps},
          {"policy", policy_json(theta)}};
}

struct ModelFile {
  MppcaModel model;
  PolicyParams policy;
  BasisConfig basis;
};

inline ModelFile model_from_json(const json& j) {
  try {
    require(j.at("format").get<std::string>() == kModelFormat, ErrorKind::Format,
            "not a model file");
    require(j.at("version").get<int>() == kFormatVersion, ErrorKind::Format,
            "unsupported model file version");
    const auto& dims = j.at("dims");
    const int k = dims.at("K").get<int>();
    const auto m = dims.at("m").get<Eigen::Index>();
    const auto dc = dims.at("d_c").get<Eigen::Index>();
    const auto dz = dims.at("d_z").get<Eigen::Index>();
    require(k >= 1 && m >= 1 && dc >= 1 && dz >= 1, ErrorKind::Format, "invalid model dimensions");

    ModelFile out;
    const auto& b = j.at("basis");
    out.basis.n_basis = b.at("n_basis").get<int>();
    out.basis.ridge_lambda = b.at("ridge_lambda").get<double>();
    if (!b.at("width").is_null()) out.basis.width = b.at("width").get<double>();

    out.model.weights = read_vector(j.at("weights"), k, "weights");
    const auto& comps = j.at("components");
    require(comps.is_array() && static_cast<int>(comps.size()) == k, ErrorKind::Format,
            "component count does not match dims.K");
    for (const auto& cj : comps) {
      MppcaComponent c;
      c.omega_loading = read_matrix(cj.at("omega_loading"), m, dz, "omega_loading");
      c.omega_offset = read_vector(cj.at("omega_offset"), m, "omega_offset");
      c.context_loading = read_matrix(cj.at("context_loading"), dc, dz, "context_loading");
      c.context_offset = read_vector(cj.at("context_offset"), dc, "context_offset");
      c.noise_var = cj.at("noise_var").get<double>();
      c.latent_mean = read_vector(cj.at("latent_mean"), dz, "latent_mean");
      c.latent_var = read_vector(cj.at("latent_var"), dz, "latent_var");
      out.model.components.push_back(std::move(c));
    }
    out.model.validate();
    out.policy = policy_from_json(j.at("policy"), k, dz);
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("malformed model file: ") + e.what());
  }
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << text;
  out.flush();
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

inline json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, origin + ": " + e.what());
  }
}

inline void save_model(const std::filesystem::path& path, const MppcaModel& model, const PolicyParams& theta,
                       const BasisConfig& basis) {
  write_text(path, model_json(model, theta, basis).dump(1) + "\n");
}

inline ModelFile load_model(const std::filesystem::path& path) {
  return model_from_json(parse_json(read_text(path), path.string()));
}

struct DemoRecord {
  VectorXd context;
  int cluster = 0;
  Trajectory trajectory;
};

inline json demo_json(const DemoRecord& r) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < r.trajectory.n_samples(); ++i) {
    std::vector<double> row{r.trajectory.times(i)};
    for (Eigen::Index j = 0; j < r.trajectory.n_joints(); ++j) row.push_back(r.trajectory.positions(i, j));
    rows.push_back(row);
  }
  return {{"context", vector_json(r.context)}, {"cluster", r.cluster}, {"trajectory", rows}};
}

inline DemoRecord demo_from_json(const json& j) {
  try {
    DemoRecord r;
    r.context = read_vector(j.at("context"), -1, "context");
    r.cluster = j.value("cluster", 0);
    const auto rows = j.at("trajectory").get<std::vector<std::vector<double>>>();
    require(rows.size() >= 2 && rows.front().size() >= 2, ErrorKind::Format,
            "trajectory needs >= 2 rows of (t, q1..qd)");
    const auto cols = rows.front().size();
    r.trajectory.times.resize(static_cast<Eigen::Index>(rows.size()));
    r.trajectory.positions.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols - 1));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i].size() == cols, ErrorKind::Format, "ragged trajectory rows");
      r.trajectory.times(static_cast<Eigen::Index>(i)) = rows[i][0];
      for (std::size_t c = 1; c < cols; ++c)
        r.trajectory.positions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c - 1)) = rows[i][c];
    }
    r.trajectory.validate();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("malformed dataset record: ") + e.what());
  }
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<DemoRecord>& records) {
  std::string text;
  for (const auto& r : records) text += demo_json(r).dump() + "\n";
  write_text(path, text);
}

inline std::vector<DemoRecord> load_dataset(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<DemoRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(demo_from_json(parse_json(line, path.string() + ":" + std::to_string(line_no))));
  }
  return out;
}

}  // namespace lampo::io

#endif  // LAMPO_IO_HPP
