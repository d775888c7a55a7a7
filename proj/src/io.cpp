// SPDX-License-Identifier: Apache-2.0
#include "naepro/io.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "naepro/error.hpp"
#include "naepro/fileio.hpp"

namespace naepro::io {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  for (auto& l : lines)
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  return lines;
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

const std::set<std::string> kRecordKeys = {"id", "sequence", "coords", "fragments"};

ProteinRecord record_from_json(const json& j, const std::string& source, std::size_t line) {
  auto fail = [&](const std::string& msg) { return ParseError(source, line, msg); };
  if (!j.is_object()) throw fail("expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kRecordKeys.count(key)) throw fail("unknown field '" + key + "'");
  }
  for (const std::string& key : kRecordKeys) {
    if (!j.contains(key)) throw fail("missing field '" + key + "'");
  }
  ProteinRecord r;
  if (!j["id"].is_string()) throw fail("'id' must be a string");
  r.id = j["id"].get<std::string>();
  if (r.id.empty()) throw fail("'id' must not be empty");
  if (!j["sequence"].is_string()) throw fail("'sequence' must be a string");
  r.sequence = upper(j["sequence"].get<std::string>());

  const json& coords = j["coords"];
  if (!coords.is_array()) throw fail("'coords' must be an array of [x, y, z] triples");
  r.coords.resize(static_cast<Eigen::Index>(coords.size()), 3);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const json& row = coords[i];
    if (!row.is_array() || row.size() != 3) throw fail("coordinate row " + std::to_string(i + 1) + " is not [x, y, z]");
    for (std::size_t c = 0; c < 3; ++c) {
      if (!row[c].is_number()) throw fail("coordinate row " + std::to_string(i + 1) + " has a non-numeric entry");
      r.coords(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c].get<double>();
    }
  }
  const json& frags = j["fragments"];
  if (!frags.is_array()) throw fail("'fragments' must be an array of 1-based indices");
  for (const json& f : frags) {
    if (!f.is_number_integer()) throw fail("fragment indices must be integers");
    const auto v = f.get<std::int64_t>();
    if (v < 1 || static_cast<std::size_t>(v) > r.sequence.size()) {
      throw fail("fragment index " + std::to_string(v) + " outside 1.." + std::to_string(r.sequence.size()));
    }
    r.fragments.push_back(static_cast<std::size_t>(v - 1));
  }
  try {
    validate_record(r);
  } catch (const ValidationError& e) {
    throw fail(e.what());
  }
  return r;
}

double parse_double(std::string_view v, const std::string& key, const std::string& source, std::size_t line) {
  double out = 0.0;
  const std::string s(v);
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || !std::isfinite(out)) {
    throw ParseError(source, line, "'" + key + "' expects a number, got '" + s + "'");
  }
  return out;
}

std::uint64_t parse_uint(std::string_view v, const std::string& key, const std::string& source, std::size_t line) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ParseError(source, line, "'" + key + "' expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view v, const std::string& key, const std::string& source, std::size_t line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError(source, line, "'" + key + "' expects true or false, got '" + std::string(v) + "'");
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

// ---- records ----------------------------------------------------------------------

std::vector<ProteinRecord> parse_records(std::string_view text, const std::string& source) {
  std::vector<ProteinRecord> out;
  std::set<std::string> ids;
  const auto lines = split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string_view line = trim(lines[n]);
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(source, n + 1, std::string("invalid JSON: ") + e.what());
    }
    ProteinRecord r = record_from_json(j, source, n + 1);
    if (!ids.insert(r.id).second) throw ParseError(source, n + 1, "duplicate record id '" + r.id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ProteinRecord> load_records(const std::string& path) { return parse_records(read_file(path), path); }

std::string serialize_record(const ProteinRecord& record) {
  nlohmann::ordered_json j;
  j["id"] = record.id;
  j["sequence"] = record.sequence;
  json coords = json::array();
  for (Eigen::Index i = 0; i < record.coords.rows(); ++i) {
    coords.push_back({record.coords(i, 0), record.coords(i, 1), record.coords(i, 2)});
  }
  j["coords"] = std::move(coords);
  std::vector<std::size_t> frags(record.fragments);
  for (auto& f : frags) ++f;
  j["fragments"] = frags;
  return j.dump();
}

std::string serialize_records(std::span<const ProteinRecord> records) {
  std::string out;
  for (const ProteinRecord& r : records) {
    out += serialize_record(r);
    out += '\n';
  }
  return out;
}

void save_records(const std::string& path, std::span<const ProteinRecord> records) {
  write_file_atomic(path, serialize_records(records));
}

// ---- FASTA --------------------------------------------------------------------------

fragments::Alignment parse_aligned_fasta(std::string_view text, const std::string& source) {
  fragments::Alignment a;
  const auto lines = split_lines(text);
  std::vector<std::size_t> header_line;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string_view line = trim(lines[n]);
    if (line.empty()) continue;
    if (line.front() == '>') {
      std::string_view id = trim(line.substr(1));
      const auto space = id.find_first_of(" \t");
      if (space != std::string_view::npos) id = id.substr(0, space);
      if (id.empty()) throw ParseError(source, n + 1, "FASTA header without an id");
      a.rows.push_back({std::string(id), {}});
      header_line.push_back(n + 1);
      continue;
    }
    if (a.rows.empty()) throw ParseError(source, n + 1, "sequence data before the first '>' header");
    for (char c : line) {
      const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (u != '-' && amino_acid_index(u) < 0) {
        throw ParseError(source, n + 1, "row '" + a.rows.back().id + "': illegal character '" + std::string(1, c) + "'");
      }
      a.rows.back().aligned.push_back(u);
    }
  }
  if (a.rows.empty()) throw ParseError(source, 0, "no FASTA records");
  std::set<std::string> ids;
  for (std::size_t r = 0; r < a.rows.size(); ++r) {
    if (!ids.insert(a.rows[r].id).second) {
      throw ParseError(source, header_line[r], "duplicate row id '" + a.rows[r].id + "'");
    }
    if (a.rows[r].aligned.size() != a.rows.front().aligned.size()) {
      throw ParseError(source, header_line[r],
                       "ragged alignment: row '" + a.rows[r].id + "' has " + std::to_string(a.rows[r].aligned.size()) +
                           " columns, expected " + std::to_string(a.rows.front().aligned.size()));
    }
  }
  return a;
}

fragments::Alignment load_aligned_fasta(const std::string& path) { return parse_aligned_fasta(read_file(path), path); }

void apply_fragment_mask(std::vector<ProteinRecord>& records, const fragments::FragmentMask& mask) {
  for (ProteinRecord& r : records) {
    for (const auto& s : mask.sequences) {
      if (s.id != r.id) continue;
      if (!s.indices.empty() && s.indices.back() >= r.size()) {
        throw ValidationError("fragment mask for '" + r.id + "' exceeds its length " + std::to_string(r.size()));
      }
      r.fragments = s.indices;
    }
  }
}

// ---- splits ---------------------------------------------------------------------------

DatasetSplit split_dataset(std::span<const ProteinRecord> records, std::array<double, 3> ratios, std::uint64_t seed) {
  double total = 0.0;
  std::size_t parts = 0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("split ratios must be finite and >= 0");
    total += r;
    if (r > 0.0) ++parts;
  }
  if (ratios[0] <= 0.0) throw ConfigError("the training ratio must be positive");
  if (records.size() < parts) {
    throw ValidationError("cannot split " + std::to_string(records.size()) + " records into " +
                          std::to_string(parts) + " non-empty parts");
  }
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);

  const auto n = static_cast<double>(records.size());
  auto share = [&](double r) {
    if (r <= 0.0) return std::size_t{0};
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n * r / total)));
  };
  const std::size_t n_val = share(ratios[1]);
  const std::size_t n_test = share(ratios[2]);
  const std::size_t n_train = records.size() - n_val - n_test;

  DatasetSplit s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::string& id = records[order[i]].id;
    if (i < n_train) s.train.push_back(id);
    else if (i < n_train + n_val) s.validation.push_back(id);
    else s.test.push_back(id);
  }
  return s;
}

std::vector<ProteinRecord> select(std::span<const ProteinRecord> records, const std::vector<std::string>& ids) {
  std::map<std::string, const ProteinRecord*> by_id;
  for (const ProteinRecord& r : records) by_id[r.id] = &r;
  std::vector<ProteinRecord> out;
  for (const std::string& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("no record with id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

// ---- config -----------------------------------------------------------------------------

RunConfig parse_config(std::string_view text, const std::string& source) {
  RunConfig c;
  std::set<std::string> seen;
  const auto lines = split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    std::string_view line = lines[n];
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, n + 1, "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const std::size_t ln = n + 1;
    if (!seen.insert(key).second) throw ParseError(source, ln, "key '" + key + "' given twice");

    if (key == "L") c.model.layers = parse_uint(value, key, source, ln);
    else if (key == "d") c.model.d = parse_uint(value, key, source, ln);
    else if (key == "H") c.model.heads = parse_uint(value, key, source, ln);
    else if (key == "k") c.model.k = parse_uint(value, key, source, ln);
    else if (key == "lambda_half") c.model.lambda_half = parse_double(value, key, source, ln);
    else if (key == "variant") {
      try {
        c.model.variant = layers::parse_variant(value);
      } catch (const ConfigError& e) {
        throw ParseError(source, ln, e.what());
      }
    } else if (key == "freeze_fragments") c.model.freeze_fragments = parse_bool(value, key, source, ln);
    else if (key == "seed") {
      c.model.seed = parse_uint(value, key, source, ln);
      c.train.seed = c.model.seed;
    } else if (key == "epochs") c.train.epochs = parse_uint(value, key, source, ln);
    else if (key == "batch_size") c.train.batch_size = parse_uint(value, key, source, ln);
    else if (key == "learning_rate") c.train.learning_rate = parse_double(value, key, source, ln);
    else if (key == "anneal_epochs") c.train.anneal_epochs = parse_uint(value, key, source, ln);
    else if (key == "anneal_max_fraction") c.train.anneal_max_fraction = parse_double(value, key, source, ln);
    else if (key == "grad_clip_norm") c.train.grad_clip_norm = parse_double(value, key, source, ln);
    else if (key == "anneal_literal") c.train.anneal_literal = parse_bool(value, key, source, ln);
    else if (key == "resample_init") c.train.resample_init = parse_bool(value, key, source, ln);
    else if (key == "split") {
      std::array<double, 3> r{};
      std::size_t part = 0;
      std::string_view rest = value;
      while (true) {
        const auto colon = rest.find(':');
        if (part >= 3) throw ParseError(source, ln, "'split' expects three ratios like 8:1:1");
        r[part++] = parse_double(trim(rest.substr(0, colon)), key, source, ln);
        if (colon == std::string_view::npos) break;
        rest = rest.substr(colon + 1);
      }
      if (part != 3) throw ParseError(source, ln, "'split' expects three ratios like 8:1:1");
      c.split = r;
    } else {
      throw ParseError(source, ln, "unknown key '" + key + "'");
    }
  }
  try {
    c.model.validate();
    c.train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

RunConfig load_config(const std::string& path) { return parse_config(read_file(path), path); }

std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  out << "L = " << c.model.layers << "\n"
      << "d = " << c.model.d << "\n"
      << "H = " << c.model.heads << "\n"
      << "k = " << c.model.k << "\n"
      << "lambda_half = " << format_double(c.model.lambda_half) << "\n"
      << "variant = " << layers::to_string(c.model.variant) << "\n"
      << "freeze_fragments = " << (c.model.freeze_fragments ? "true" : "false") << "\n"
      << "seed = " << c.model.seed << "\n"
      << "epochs = " << c.train.epochs << "\n"
      << "batch_size = " << c.train.batch_size << "\n"
      << "learning_rate = " << format_double(c.train.learning_rate) << "\n"
      << "anneal_epochs = " << c.train.anneal_epochs << "\n"
      << "anneal_max_fraction = " << format_double(c.train.anneal_max_fraction) << "\n"
      << "grad_clip_norm = " << format_double(c.train.grad_clip_norm) << "\n"
      << "anneal_literal = " << (c.train.anneal_literal ? "true" : "false") << "\n"
      << "resample_init = " << (c.train.resample_init ? "true" : "false") << "\n"
      << "split = " << format_double(c.split[0]) << ":" << format_double(c.split[1]) << ":"
      << format_double(c.split[2]) << "\n";
  return out.str();
}

}  // namespace naepro::io
