#include "fsgl/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fsgl/bspline.hpp"
#include "fsgl/errors.hpp"

namespace fsgl {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// Re-throws a module error with the pipeline stage prepended, preserving the
// error category (and therefore the exit code).
template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const input_error& e) {
    throw input_error(std::string(name) + ": " + e.what());
  } catch (const numerical_error& e) {
    throw numerical_error(std::string(name) + ": " + e.what());
  } catch (const convergence_error& e) {
    throw convergence_error(std::string(name) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::vector<std::string>> rows;  // header excluded
  std::vector<int> lines;                      // 1-based starting line per row
};

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// Minimal RFC-4180 reader: quoted fields may contain commas, escaped quotes
// ("") and newlines; unquoted fields are trimmed of surrounding blanks.
CsvTable read_csv(const std::string& path, const std::vector<std::string>& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  std::vector<std::vector<std::string>> records;
  std::vector<int> lines;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;        // inside a quoted field
  bool was_quoted = false;    // current field started with a quote
  int line = 1, record_line = 1;

  const auto end_field = [&]() {
    record.push_back(was_quoted ? field : trim(field));
    field.clear();
    was_quoted = false;
  };
  const auto end_record = [&]() {
    end_field();
    const bool blank = record.size() == 1 && record[0].empty();
    if (!blank) {
      records.push_back(std::move(record));
      lines.push_back(record_line);
    }
    record.clear();
    record_line = line;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!was_quoted && trim(field).empty()) {
          quoted = was_quoted = true;
          field.clear();
        } else {
          field += c;
        }
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        ++line;
        end_record();
        break;
      default:
        field += c;
    }
  }
  if (quoted) throw input_error(path + ": unterminated quoted field");
  if (!field.empty() || !record.empty()) end_record();

  if (records.empty()) throw input_error(path + ": empty file");
  std::vector<std::string> head = records.front();
  for (auto& h : head) {
    h = trim(h);
    std::transform(h.begin(), h.end(), h.begin(), [](unsigned char ch) { return std::tolower(ch); });
  }
  if (head != header) {
    std::string want;
    for (std::size_t k = 0; k < header.size(); ++k) want += (k ? "," : "") + header[k];
    throw input_error(path + ": expected header '" + want + "'");
  }

  CsvTable table;
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != header.size())
      throw input_error(path + ":" + std::to_string(lines[r]) + ": expected " +
                        std::to_string(header.size()) + " fields, found " +
                        std::to_string(records[r].size()));
    table.rows.push_back(std::move(records[r]));
    table.lines.push_back(lines[r]);
  }
  return table;
}

double parse_double(const std::string& s, const char* what, const std::string& path, int line) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(v))
    throw input_error(path + ":" + std::to_string(line) + ": " + what + " '" + s +
                      "' is not a finite number");
  return v;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// Full-precision float formatting; %.17g round-trips every double.
std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

fs::path ensure_outdir(const RunConfig& config) {
  fs::path dir(config.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw input_error("cannot create output directory '" + config.output_dir + "': " + ec.message());
  return dir;
}

std::ofstream open_out(const fs::path& dir, const char* name) {
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw input_error("cannot write '" + (dir / name).string() + "'");
  return out;
}

void write_ingest_log(const fs::path& dir, const IngestResult& ing) {
  std::ofstream out = open_out(dir, "ingest_log.csv");
  out << "sample_id,reason\n";
  for (const auto& rec : ing.excluded)
    out << csv_escape(rec.sample_id) << "," << csv_escape(rec.reason) << "\n";
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

[[noreturn]] void bad_key(const std::string& where, const std::string& key) {
  throw input_error("config: unknown key '" + key + "' in " + where);
}

double as_number(const ordered_json& v, const std::string& what) {
  if (!v.is_number()) throw input_error("config: " + what + " must be a number");
  return v.get<double>();
}

int as_int(const ordered_json& v, const std::string& what) {
  if (!v.is_number_integer()) throw input_error("config: " + what + " must be an integer");
  return v.get<int>();
}

std::string as_string(const ordered_json& v, const std::string& what) {
  if (!v.is_string()) throw input_error("config: " + what + " must be a string");
  return v.get<std::string>();
}

BasisSpec parse_basis_spec(const std::string& name, const ordered_json& obj) {
  if (!obj.is_object()) throw input_error("config: predictor '" + name + "' must be an object");
  BasisSpec spec;
  bool have_count = false, have_knots = false;
  for (const auto& [key, val] : obj.items()) {
    const std::string what = "predictors." + name + "." + key;
    if (key == "kind") {
      const std::string kind = as_string(val, what);
      if (kind == "functional")
        spec.functional = true;
      else if (kind == "scalar")
        spec.functional = false;
      else
        throw input_error("config: " + what + " must be 'functional' or 'scalar'");
    } else if (key == "order") {
      spec.order = as_int(val, what);
    } else if (key == "interior_knots") {
      spec.n_interior = as_int(val, what);
      have_count = true;
    } else if (key == "knots") {
      if (!val.is_array()) throw input_error("config: " + what + " must be an array");
      for (const auto& k : val) spec.knots.push_back(as_number(k, what));
      have_knots = true;
    } else if (key == "ridge") {
      spec.ridge = as_number(val, what);
    } else if (key == "domain") {
      if (!val.is_array() || val.size() != 2)
        throw input_error("config: " + what + " must be [lower, upper]");
      spec.domain = {as_number(val[0], what), as_number(val[1], what)};
    } else {
      bad_key("predictors." + name, key);
    }
  }
  if (!spec.functional) {
    if (obj.size() > 1)
      throw input_error("config: scalar predictor '" + name + "' takes no basis settings");
    return spec;
  }
  if (have_count && have_knots)
    throw input_error("config: predictor '" + name + "': give interior_knots or knots, not both");
  if (spec.order < 1) throw input_error("config: predictor '" + name + "': order must be >= 1");
  if (spec.n_interior < 0)
    throw input_error("config: predictor '" + name + "': interior_knots must be >= 0");
  if (spec.ridge < 0) throw input_error("config: predictor '" + name + "': ridge must be >= 0");
  if (spec.domain && !(spec.domain->first < spec.domain->second))
    throw input_error("config: predictor '" + name + "': domain must satisfy lower < upper");
  return spec;
}

}  // namespace

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open config '" + path + "'");
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw input_error("config '" + path + "': " + e.what());
  }
  if (!doc.is_object()) throw input_error("config '" + path + "': top level must be an object");

  RunConfig cfg;
  bool alphas_given = false;
  for (const auto& [key, val] : doc.items()) {
    if (key == "data") {
      cfg.data_csv = as_string(val, key);
    } else if (key == "labels") {
      cfg.labels_csv = as_string(val, key);
    } else if (key == "output_dir") {
      cfg.output_dir = as_string(val, key);
    } else if (key == "reference_class") {
      cfg.reference_class = as_string(val, key);
    } else if (key == "predictors") {
      if (!val.is_object()) throw input_error("config: predictors must be an object");
      for (const auto& [name, spec] : val.items())
        cfg.predictors.emplace_back(name, parse_basis_spec(name, spec));
    } else if (key == "filters") {
      if (!val.is_object()) throw input_error("config: filters must be an object");
      for (const auto& [fkey, fval] : val.items()) {
        if (fkey == "max_missing") {
          cfg.max_missing = as_int(fval, "filters.max_missing");
          if (*cfg.max_missing < 0) throw input_error("config: filters.max_missing must be >= 0");
        } else if (fkey == "required") {
          if (!fval.is_array()) throw input_error("config: filters.required must be an array");
          for (const auto& r : fval) cfg.required.push_back(as_string(r, "filters.required"));
        } else {
          bad_key("filters", fkey);
        }
      }
    } else if (key == "grid") {
      if (!val.is_object()) throw input_error("config: grid must be an object");
      for (const auto& [gkey, gval] : val.items()) {
        if (gkey == "n_lambda") {
          cfg.n_lambda = as_int(gval, "grid.n_lambda");
        } else if (gkey == "min_ratio") {
          cfg.min_ratio = as_number(gval, "grid.min_ratio");
        } else if (gkey == "alphas") {
          if (!gval.is_array()) throw input_error("config: grid.alphas must be an array");
          cfg.alphas.clear();
          for (const auto& a : gval) cfg.alphas.push_back(as_number(a, "grid.alphas"));
          alphas_given = true;
        } else if (gkey == "lambdas") {
          if (!gval.is_array()) throw input_error("config: grid.lambdas must be an array");
          for (const auto& l : gval) cfg.lambdas.push_back(as_number(l, "grid.lambdas"));
        } else {
          bad_key("grid", gkey);
        }
      }
      if (alphas_given && cfg.alphas.empty())
        throw input_error("config: grid.alphas must not be empty");
    } else if (key == "solver") {
      if (!val.is_object()) throw input_error("config: solver must be an object");
      for (const auto& [skey, sval] : val.items()) {
        if (skey == "tol")
          cfg.controls.tol = as_number(sval, "solver.tol");
        else if (skey == "max_outer")
          cfg.controls.max_outer = as_int(sval, "solver.max_outer");
        else if (skey == "max_inner")
          cfg.controls.max_inner = as_int(sval, "solver.max_inner");
        else
          bad_key("solver", skey);
      }
    } else if (key == "bootstrap") {
      if (!val.is_object()) throw input_error("config: bootstrap must be an object");
      for (const auto& [bkey, bval] : val.items()) {
        if (bkey == "replicates") {
          cfg.n_replicates = as_int(bval, "bootstrap.replicates");
        } else if (bkey == "seed") {
          if (!bval.is_number_integer()) throw input_error("config: bootstrap.seed must be an integer");
          cfg.seed = bval.get<std::uint64_t>();
        } else if (bkey == "rotations") {
          if (!bval.is_array()) throw input_error("config: bootstrap.rotations must be an array");
          for (const auto& r : bval) cfg.rotations.push_back(as_string(r, "bootstrap.rotations"));
        } else {
          bad_key("bootstrap", bkey);
        }
      }
    } else {
      bad_key("the top level", key);
    }
  }

  if (cfg.data_csv.empty()) throw input_error("config: missing 'data'");
  if (cfg.labels_csv.empty()) throw input_error("config: missing 'labels'");
  if (cfg.predictors.empty()) throw input_error("config: 'predictors' must name every predictor");

  // Data paths are relative to the config file, so a bundled dataset works
  // from any working directory; output_dir stays relative to the caller.
  const fs::path base = fs::path(path).parent_path();
  const auto resolve = [&](std::string& p) {
    if (!p.empty() && !fs::path(p).is_absolute()) p = (base / p).string();
  };
  resolve(cfg.data_csv);
  resolve(cfg.labels_csv);
  return cfg;
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

IngestResult ingest(const RunConfig& config) {
  std::map<std::string, const BasisSpec*> spec_of;
  for (const auto& [name, spec] : config.predictors)
    if (!spec_of.emplace(name, &spec).second)
      throw input_error("config: predictor '" + name + "' listed twice");

  const std::vector<std::string> label_header = {"sample_id", "class"};
  const CsvTable ltab = read_csv(config.labels_csv, label_header);
  std::map<std::string, std::string> label_of;
  for (std::size_t r = 0; r < ltab.rows.size(); ++r) {
    const auto& row = ltab.rows[r];
    if (row[0].empty())
      throw input_error(config.labels_csv + ":" + std::to_string(ltab.lines[r]) + ": empty sample_id");
    if (row[1].empty())
      throw input_error(config.labels_csv + ":" + std::to_string(ltab.lines[r]) + ": empty class");
    if (!label_of.emplace(row[0], row[1]).second)
      throw input_error(config.labels_csv + ":" + std::to_string(ltab.lines[r]) +
                        ": duplicate label for sample '" + row[0] + "'");
  }

  struct Pt {
    double t, v;
    int line;
  };
  const std::vector<std::string> data_header = {"sample_id", "predictor", "time", "value"};
  const CsvTable dtab = read_csv(config.data_csv, data_header);
  std::map<std::string, std::map<std::string, std::vector<Pt>>> obs;
  for (std::size_t r = 0; r < dtab.rows.size(); ++r) {
    const auto& row = dtab.rows[r];
    const int line = dtab.lines[r];
    if (row[0].empty())
      throw input_error(config.data_csv + ":" + std::to_string(line) + ": empty sample_id");
    if (!spec_of.count(row[1]))
      throw input_error(config.data_csv + ":" + std::to_string(line) + ": unknown predictor '" +
                        row[1] + "' (not in the config)");
    const double t = parse_double(row[2], "time", config.data_csv, line);
    const double v = parse_double(row[3], "value", config.data_csv, line);
    obs[row[0]][row[1]].push_back({t, v, line});
  }

  for (const auto& [sample, _] : obs)
    if (!label_of.count(sample))
      throw input_error("sample '" + sample + "' has data but no label");
  for (const auto& [sample, _] : label_of)
    if (!obs.count(sample))
      throw input_error("sample '" + sample + "' has a label but no data");

  // Classes: sorted unique label strings, numbered 1..L in that order.
  std::set<std::string> class_set;
  for (const auto& [_, cls] : label_of) class_set.insert(cls);
  const std::vector<std::string> classes(class_set.begin(), class_set.end());
  const int L = int(classes.size());
  if (L < 2) throw input_error("need at least two classes, found " + std::to_string(L));
  int reference = L;
  if (config.reference_class) {
    const auto it = std::find(classes.begin(), classes.end(), *config.reference_class);
    if (it == classes.end())
      throw input_error("reference_class '" + *config.reference_class + "' is not an observed class");
    reference = int(it - classes.begin()) + 1;
  }

  // Per-predictor observed time grid (sorted union across samples).
  std::map<std::string, std::vector<double>> grid_of;
  for (const auto& [sample, preds] : obs)
    for (const auto& [pred, pts] : preds)
      for (const Pt& pt : pts) grid_of[pred].push_back(pt.t);
  for (auto& [pred, ts] : grid_of) {
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  }
  for (const auto& [name, _] : config.predictors)
    if (!grid_of.count(name))
      throw input_error("predictor '" + name + "' is configured but never appears in the data");

  const std::set<std::string> required(config.required.begin(), config.required.end());
  for (const auto& name : required)
    if (!spec_of.count(name))
      throw input_error("config: filters.required names unknown predictor '" + name + "'");

  // Exclusion pass.  A sample is kept only when every predictor is usable;
  // the first failing predictor supplies the logged reason.
  IngestResult out;
  std::vector<std::string> kept;
  for (const auto& [sample, preds] : obs) {
    std::string reason;
    for (const auto& [name, spec] : config.predictors) {
      const auto it = preds.find(name);
      const std::size_t count = it == preds.end() ? 0 : it->second.size();
      if (count == 0) {
        reason = "no observations for '" + name + "'";
        break;
      }
      // Duplicate times are a data error, not an exclusion.
      std::vector<double> ts;
      for (const Pt& pt : it->second) ts.push_back(pt.t);
      std::sort(ts.begin(), ts.end());
      for (std::size_t k = 1; k < ts.size(); ++k)
        if (ts[k] == ts[k - 1])
          throw input_error(config.data_csv + ": sample '" + sample + "' has duplicate time " +
                            num(ts[k]) + " for predictor '" + name + "'");
      const int missing = int(grid_of[name].size() - ts.size());
      if (spec.functional) {
        if (required.count(name) && missing > 0) {
          reason = "missing " + std::to_string(missing) + " time point(s) of required predictor '" +
                   name + "'";
          break;
        }
        if (config.max_missing && missing > *config.max_missing) {
          reason = "missing " + std::to_string(missing) + " of " +
                   std::to_string(grid_of[name].size()) + " time points for '" + name + "'";
          break;
        }
      } else if (missing > 0) {
        // Scalar groups have one column per time point, so a gap cannot be
        // represented.
        reason = "missing " + std::to_string(missing) + " of " +
                 std::to_string(grid_of[name].size()) + " entries for scalar predictor '" + name +
                 "'";
        break;
      }
    }
    if (reason.empty())
      kept.push_back(sample);
    else
      out.excluded.push_back({sample, reason});
  }
  if (kept.empty()) throw input_error("no samples left after exclusions");

  const int n = int(kept.size());
  FunctionalDataset& ds = out.data;
  ds.n_classes = L;
  ds.reference_class = reference;
  ds.class_names = classes;
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto& cls = label_of[kept[size_t(i)]];
    ds.labels[size_t(i)] =
        int(std::find(classes.begin(), classes.end(), cls) - classes.begin()) + 1;
  }
  for (int l = 1; l <= L; ++l)
    if (std::find(ds.labels.begin(), ds.labels.end(), l) == ds.labels.end())
      throw input_error("class '" + classes[size_t(l - 1)] + "' has no samples left after exclusions");

  for (const auto& [name, spec] : config.predictors) {
    GroupData g;
    g.name = name;
    g.functional = spec.functional;
    const std::vector<double>& ts_grid = grid_of[name];
    if (spec.functional) {
      const double lo = spec.domain ? spec.domain->first : ts_grid.front();
      const double hi = spec.domain ? spec.domain->second : ts_grid.back();
      if (!(lo < hi))
        throw input_error("predictor '" + name + "' needs at least two distinct time points");
      if (ts_grid.front() < lo || ts_grid.back() > hi)
        throw input_error("predictor '" + name + "': observed times fall outside the configured domain [" +
                          num(lo) + ", " + num(hi) + "]");
      g.basis = spec.knots.empty()
                    ? BSplineBasis::uniform(lo, hi, spec.order, spec.n_interior)
                    : BSplineBasis(lo, hi, spec.order, spec.knots);
      g.values.resize(n, g.basis->size());
      for (int i = 0; i < n; ++i) {
        const auto& pts = obs[kept[size_t(i)]][name];
        std::vector<Pt> sorted(pts.begin(), pts.end());
        std::sort(sorted.begin(), sorted.end(), [](const Pt& a, const Pt& b) { return a.t < b.t; });
        RawCurve curve;
        curve.times.resize(Eigen::Index(sorted.size()));
        curve.values.resize(Eigen::Index(sorted.size()));
        for (std::size_t k = 0; k < sorted.size(); ++k) {
          curve.times[Eigen::Index(k)] = sorted[k].t;
          curve.values[Eigen::Index(k)] = sorted[k].v;
        }
        g.values.row(i) = smooth_observations(*g.basis, curve, spec.ridge,
                                              "'" + name + "' sample '" + kept[size_t(i)] + "'")
                              .transpose();
      }
    } else {
      g.values.resize(n, Eigen::Index(ts_grid.size()));
      for (int i = 0; i < n; ++i) {
        const auto& pts = obs[kept[size_t(i)]][name];
        for (const Pt& pt : pts) {
          const auto it = std::lower_bound(ts_grid.begin(), ts_grid.end(), pt.t);
          g.values(i, Eigen::Index(it - ts_grid.begin())) = pt.v;
        }
      }
    }
    ds.groups.push_back(std::move(g));
  }

  ds.validate();
  out.sample_ids = std::move(kept);
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

namespace {

struct GridRun {
  IngestResult ing;
  DesignMatrix design;
  Eigen::MatrixXd y;
  GridSearchResult result;
};

TuningGrid make_grid(const RunConfig& config, const DesignMatrix& design, const Eigen::MatrixXd& y) {
  if (!config.lambdas.empty()) {
    TuningGrid grid;
    grid.lambdas = config.lambdas;
    grid.alphas = config.alphas;
    return grid;
  }
  return default_grid(design, y, config.n_lambda, config.min_ratio, config.alphas);
}

GridRun run_grid(const RunConfig& config) {
  GridRun run;
  run.ing = stage("ingest", [&] { return ingest(config); });
  run.design = build_design(run.ing.data);
  run.y = encode_labels(run.ing.data.labels, run.ing.data.n_classes, run.ing.data.reference_class);
  run.result = stage("fit", [&] {
    const TuningGrid grid = make_grid(config, run.design, run.y);
    return grid_search(run.design, run.y, grid, config.controls);
  });
  return run;
}

void write_path_table(const fs::path& dir, const GridRun& run) {
  std::ofstream out = open_out(dir, "path.csv");
  out << "lambda,alpha,converged,loglik,df,bic,active_groups\n";
  for (const ScoredFit& sf : run.result.fits) {
    out << num(sf.lambda) << "," << num(sf.alpha) << "," << (sf.converged ? 1 : 0) << ","
        << num(sf.report.loglik) << "," << num(sf.df) << "," << num(sf.bic) << ",";
    std::string joined;
    for (std::size_t j = 0; j < run.design.group_names.size(); ++j)
      if (sf.report.active_groups[j]) {
        if (!joined.empty()) joined += "|";
        joined += run.design.group_names[j];
      }
    out << csv_escape(joined) << "\n";
  }
}

// Class name of sub-block l (0-based) under this dataset's reference.
std::string subblock_class(const FunctionalDataset& ds, int l) {
  for (int c = 1; c <= ds.n_classes; ++c)
    if (c != ds.reference_class && rotated_label(c, ds.n_classes, ds.reference_class) == l + 1)
      return ds.class_names[size_t(c - 1)];
  throw input_error("sub-block index out of range");
}

void write_best_model(const fs::path& dir, const GridRun& run, const ScoredFit& best) {
  const FunctionalDataset& ds = run.ing.data;
  const int L = ds.n_classes;
  const CoefficientSet& coefs = best.report.coefficients;

  ordered_json doc;
  doc["lambda"] = best.lambda;
  doc["alpha"] = best.alpha;
  doc["loglik"] = best.report.loglik;
  doc["df"] = best.df;
  doc["bic"] = best.bic;
  doc["n_samples"] = ds.n();
  doc["classes"] = ds.class_names;
  doc["reference_class"] = ds.class_names[size_t(ds.reference_class - 1)];

  ordered_json intercepts = ordered_json::array();
  for (int l = 0; l < L - 1; ++l) {
    ordered_json e;
    e["class"] = subblock_class(ds, l);
    e["value"] = coefs.intercepts[l];
    intercepts.push_back(std::move(e));
  }
  doc["intercepts"] = std::move(intercepts);

  ordered_json groups = ordered_json::array();
  for (std::size_t j = 0; j < ds.groups.size(); ++j) {
    const GroupData& g = ds.groups[j];
    ordered_json gj;
    gj["name"] = g.name;
    gj["kind"] = g.functional ? "functional" : "scalar";
    gj["active"] = bool(best.report.active_groups[j]);
    ordered_json subs = ordered_json::array();
    for (int l = 0; l < L - 1; ++l) {
      ordered_json s;
      s["class"] = subblock_class(ds, l);
      s["active"] = bool(best.report.active_subblocks[j][size_t(l)]);
      s["coefficients"] = std::vector<double>(coefs.blocks[j].col(l).begin(),
                                              coefs.blocks[j].col(l).end());
      subs.push_back(std::move(s));
    }
    gj["subblocks"] = std::move(subs);
    if (g.functional) {
      ordered_json basis;
      basis["order"] = g.basis->order();
      basis["domain"] = {g.basis->lower(), g.basis->upper()};
      basis["interior_knots"] = g.basis->interior_knots();
      gj["basis"] = std::move(basis);
    }
    groups.push_back(std::move(gj));
  }
  doc["groups"] = std::move(groups);

  std::ofstream out = open_out(dir, "best_model.json");
  out << doc.dump(2) << "\n";
}

// Coefficient curves beta_jl(t) = sum_m b_jl[m] phi_m(t) on a 200-point grid,
// for plotting.
void write_coefficient_functions(const fs::path& dir, const GridRun& run, const ScoredFit& best) {
  constexpr int kPoints = 200;
  const FunctionalDataset& ds = run.ing.data;
  std::ofstream out = open_out(dir, "coefficient_functions.csv");
  out << "predictor,class,t,value\n";
  for (std::size_t j = 0; j < ds.groups.size(); ++j) {
    const GroupData& g = ds.groups[j];
    if (!g.functional) continue;
    Eigen::VectorXd ts(kPoints);
    for (int k = 0; k < kPoints; ++k)
      ts[k] = g.basis->lower() +
              (g.basis->upper() - g.basis->lower()) * double(k) / double(kPoints - 1);
    const Eigen::MatrixXd phi = g.basis->evaluate_many(ts);  // kPoints x M
    const Eigen::MatrixXd curves = phi * best.report.coefficients.blocks[j];
    for (int l = 0; l < ds.n_classes - 1; ++l) {
      const std::string cls = subblock_class(ds, l);
      for (int k = 0; k < kPoints; ++k)
        out << csv_escape(g.name) << "," << csv_escape(cls) << "," << num(ts[k]) << ","
            << num(curves(k, l)) << "\n";
    }
  }
}

}  // namespace

StoredModel read_best_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open model file '" + path + "'");
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw input_error("model file '" + path + "': " + e.what());
  }
  try {
    StoredModel m;
    m.lambda = doc.at("lambda").get<double>();
    m.alpha = doc.at("alpha").get<double>();
    m.classes = doc.at("classes").get<std::vector<std::string>>();
    m.reference_class = doc.at("reference_class").get<std::string>();
    const int L = int(m.classes.size());
    const auto class_index = [&](const std::string& name) {
      const auto it = std::find(m.classes.begin(), m.classes.end(), name);
      if (it == m.classes.end())
        throw input_error("model file '" + path + "': unknown class '" + name + "'");
      return int(it - m.classes.begin()) + 1;
    };
    const int reference = class_index(m.reference_class);
    const auto subblock_of = [&](const std::string& name) {
      return rotated_label(class_index(name), L, reference) - 1;
    };

    m.coefficients.intercepts = Eigen::VectorXd::Zero(L - 1);
    for (const auto& e : doc.at("intercepts"))
      m.coefficients.intercepts[subblock_of(e.at("class").get<std::string>())] =
          e.at("value").get<double>();
    for (const auto& gj : doc.at("groups")) {
      m.group_names.push_back(gj.at("name").get<std::string>());
      const auto& subs = gj.at("subblocks");
      const int dim = int(subs.at(0).at("coefficients").size());
      Eigen::MatrixXd block = Eigen::MatrixXd::Zero(dim, L - 1);
      for (const auto& s : subs) {
        const auto vals = s.at("coefficients").get<std::vector<double>>();
        if (int(vals.size()) != dim)
          throw input_error("model file '" + path + "': ragged coefficient block in group '" +
                            m.group_names.back() + "'");
        block.col(subblock_of(s.at("class").get<std::string>())) =
            Eigen::Map<const Eigen::VectorXd>(vals.data(), dim);
      }
      m.coefficients.blocks.push_back(std::move(block));
    }
    return m;
  } catch (const ordered_json::exception& e) {
    throw input_error("model file '" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void run_smooth(const RunConfig& config) {
  const IngestResult ing = stage("ingest", [&] { return ingest(config); });
  stage("write", [&] {
    const fs::path dir = ensure_outdir(config);
    write_ingest_log(dir, ing);
    std::ofstream out = open_out(dir, "smoothed.csv");
    out << "sample_id,predictor,index,value\n";
    for (const GroupData& g : ing.data.groups)
      for (int i = 0; i < ing.data.n(); ++i)
        for (int k = 0; k < g.dim(); ++k)
          out << csv_escape(ing.sample_ids[size_t(i)]) << "," << csv_escape(g.name) << ","
              << (k + 1) << "," << num(g.values(i, k)) << "\n";
  });
}

void run_path(const RunConfig& config) {
  const GridRun run = run_grid(config);
  stage("write", [&] {
    const fs::path dir = ensure_outdir(config);
    write_ingest_log(dir, run.ing);
    write_path_table(dir, run);
  });
}

void run_fit(const RunConfig& config) {
  const GridRun run = run_grid(config);
  // Throws convergence_error (exit 4) when no grid point converged.
  const ScoredFit& best = stage("fit", [&]() -> const ScoredFit& { return run.result.best_fit(); });
  stage("write", [&] {
    const fs::path dir = ensure_outdir(config);
    write_ingest_log(dir, run.ing);
    write_path_table(dir, run);
    write_best_model(dir, run, best);
    write_coefficient_functions(dir, run, best);
  });
}

void run_bootstrap(const RunConfig& config, int jobs) {
  const IngestResult ing = stage("ingest", [&] { return ingest(config); });
  const FunctionalDataset& ds = ing.data;

  BootstrapOptions opts;
  opts.n_replicates = config.n_replicates;
  opts.seed = config.seed;
  opts.jobs = jobs;
  for (const auto& name : config.rotations) {
    const auto it = std::find(ds.class_names.begin(), ds.class_names.end(), name);
    if (it == ds.class_names.end())
      throw input_error("bootstrap: rotation class '" + name + "' is not an observed class");
    opts.rotations.push_back(int(it - ds.class_names.begin()) + 1);
  }

  const SelectionReport rep = stage("bootstrap", [&] {
    const DesignMatrix design = build_design(ds);
    const Eigen::MatrixXd y = encode_labels(ds.labels, ds.n_classes, ds.reference_class);
    const TuningGrid grid = make_grid(config, design, y);
    return bootstrap_run(ds, grid, opts, config.controls);
  });

  stage("write", [&] {
    const fs::path dir = ensure_outdir(config);
    write_ingest_log(dir, ing);
    const Eigen::MatrixXd bfreq = rep.boundary_frequency();
    const Eigen::VectorXd vfreq = rep.variable_frequency();
    const int p = int(rep.group_names.size());

    {
      std::ofstream out = open_out(dir, "bootstrap_boundaries.csv");
      out << "class_a,class_b";
      for (const auto& name : rep.group_names) out << "," << csv_escape(name);
      out << "\n";
      for (std::size_t k = 0; k < rep.pairs.size(); ++k) {
        out << csv_escape(ds.class_names[size_t(rep.pairs[k].first - 1)]) << ","
            << csv_escape(ds.class_names[size_t(rep.pairs[k].second - 1)]);
        for (int g = 0; g < p; ++g) {
          out << ",";
          if (rep.boundary_attempts(Eigen::Index(k), g) > 0) out << num(bfreq(Eigen::Index(k), g));
        }
        out << "\n";
      }
    }
    {
      std::ofstream out = open_out(dir, "bootstrap_variables.csv");
      for (int g = 0; g < p; ++g) out << (g ? "," : "") << csv_escape(rep.group_names[size_t(g)]);
      out << "\n";
      for (int g = 0; g < p; ++g) {
        if (g) out << ",";
        if (rep.variable_attempts > 0) out << num(vfreq[g]);
      }
      out << "\n";
    }
    {
      ordered_json doc;
      doc["replicates"] = rep.n_replicates;
      doc["seed"] = config.seed;
      ordered_json rot = ordered_json::array();
      for (int r : rep.rotations) rot.push_back(ds.class_names[size_t(r - 1)]);
      doc["rotations"] = std::move(rot);
      doc["classes"] = ds.class_names;
      doc["groups"] = rep.group_names;
      doc["n_failed_fits"] = rep.n_failed_fits;

      ordered_json variable;
      variable["attempts"] = rep.variable_attempts;
      variable["counts"] = std::vector<int>(rep.variable_counts.begin(), rep.variable_counts.end());
      ordered_json vf = ordered_json::array();
      for (int g = 0; g < p; ++g)
        vf.push_back(rep.variable_attempts > 0 ? ordered_json(vfreq[g]) : ordered_json(nullptr));
      variable["frequency"] = std::move(vf);
      doc["variable"] = std::move(variable);

      ordered_json bounds = ordered_json::array();
      for (std::size_t k = 0; k < rep.pairs.size(); ++k) {
        ordered_json b;
        b["class_a"] = ds.class_names[size_t(rep.pairs[k].first - 1)];
        b["class_b"] = ds.class_names[size_t(rep.pairs[k].second - 1)];
        std::vector<int> attempts(static_cast<std::size_t>(p)), counts(static_cast<std::size_t>(p));
        for (int g = 0; g < p; ++g) {
          attempts[size_t(g)] = rep.boundary_attempts(Eigen::Index(k), g);
          counts[size_t(g)] = rep.boundary_counts(Eigen::Index(k), g);
        }
        b["attempts"] = attempts;
        b["counts"] = counts;
        ordered_json bf = ordered_json::array();
        for (int g = 0; g < p; ++g)
          bf.push_back(rep.boundary_attempts(Eigen::Index(k), g) > 0
                           ? ordered_json(bfreq(Eigen::Index(k), g))
                           : ordered_json(nullptr));
        b["frequency"] = std::move(bf);
        bounds.push_back(std::move(b));
      }
      doc["boundaries"] = std::move(bounds);

      std::ofstream out = open_out(dir, "bootstrap_report.json");
      out << doc.dump(2) << "\n";
    }
  });
}

}  // namespace fsgl
