#include "predaqp/engine.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "predaqp/error.hpp"

namespace predaqp {

Fingerprint schema_fingerprint(const Schema& schema, const LabelEncoder* encoder) {
  std::string text;
  for (const auto& c : schema.columns()) {
    text += c.name;
    text += '\t';
    text += to_string(c.kind);
    text += '\n';
    if (encoder && c.kind == ColumnKind::kCategorical) {
      for (const auto& v : encoder->values(c.position)) {
        text += "  ";
        text += v;
        text += '\n';
      }
    }
  }
  return sha256(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Fingerprint sha256(std::span<const std::uint8_t> bytes) {
  Fingerprint fp{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), fp.data(), &len, EVP_sha256(), nullptr) != 1 || len != fp.size())
    throw Error(ErrorCode::kIoError, "SHA-256 computation failed");
  return fp;
}

std::string bundle_checksum(const ModelBundle& bundle) { return to_hex(sha256(encode_bundle(bundle))); }

std::string to_hex(const Fingerprint& fp) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (const auto b : fp) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 15]);
  }
  return out;
}

void ModelBundle::check_schema(const Schema& schema) const {
  const Schema& own = transforms.schema();
  auto same_prefix = [&](std::size_t n) {
    if (schema.size() != n) return false;
    for (std::size_t i = 0; i < n; ++i)
      if (schema[i].name != own[i].name || schema[i].kind != own[i].kind) return false;
    return true;
  };
  if (same_prefix(own.size())) return;
  if (discretizer && same_prefix(own.size() - discretizer->columns().size())) return;
  throw Error(ErrorCode::kSchemaMismatch, "table schema does not match the model's schema");
}

// ---------------------------------------------------------------------------
// Model file

namespace {

constexpr char kMagic[4] = {'E', 'L', 'C', 'T'};

std::uint32_t checksum(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_section(ByteWriter& out, const char (&tag)[5], const std::vector<std::uint8_t>& payload) {
  out.raw({reinterpret_cast<const std::uint8_t*>(tag), 4});
  out.u64(payload.size());
  out.raw(payload);
  out.u32(checksum(payload));
}

}  // namespace

std::vector<std::uint8_t> encode_bundle(const ModelBundle& bundle) {
  if (bundle.table_rows == 0) throw Error(ErrorCode::kInvalidArgument, "bundle has no training rows");
  ByteWriter out;
  out.raw({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  out.u32(kModelFormatVersion);
  const auto fp = bundle.fingerprint();
  out.raw(fp);
  out.u64(bundle.table_rows);
  out.u32(bundle.discretizer ? 5 : 4);

  ByteWriter trns;
  bundle.transforms.serialize(trns);
  write_section(out, "TRNS", trns.take());
  ByteWriter cvae;
  bundle.cvae.serialize(cvae);
  write_section(out, "CVAE", cvae.take());
  ByteWriter ar;
  bundle.ar.serialize(ar);
  write_section(out, "ARMD", ar.take());
  if (bundle.discretizer) {
    ByteWriter disc;
    bundle.discretizer->serialize(disc);
    write_section(out, "DISC", disc.take());
  }
  ByteWriter meta;
  meta.u8(static_cast<std::uint8_t>(bundle.mask_kind));
  meta.str(bundle.summary);
  write_section(out, "META", meta.take());
  return out.take();
}

ModelBundle decode_bundle(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  const auto magic = in.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw Error(ErrorCode::kCorruptFile, "bad magic bytes");
  const auto version = in.u32();
  if (version != kModelFormatVersion)
    throw Error(ErrorCode::kVersionMismatch,
                "model format version " + std::to_string(version) + ", expected " + std::to_string(kModelFormatVersion));
  Fingerprint stored{};
  const auto fp = in.raw(stored.size());
  std::copy(fp.begin(), fp.end(), stored.begin());
  ModelBundle b;
  b.table_rows = in.u64();
  if (b.table_rows == 0) throw Error(ErrorCode::kCorruptFile, "bundle has zero training rows");
  const auto sections = in.u32();
  bool have[4] = {false, false, false, false};
  for (std::uint32_t s = 0; s < sections; ++s) {
    const auto tag_bytes = in.raw(4);
    const std::string tag(tag_bytes.begin(), tag_bytes.end());
    const auto len = in.u64();
    if (len > in.remaining()) throw Error(ErrorCode::kCorruptFile, "section '" + tag + "' truncated");
    const auto payload = in.raw(len);
    if (in.u32() != checksum(payload)) throw Error(ErrorCode::kCorruptFile, "checksum mismatch in section '" + tag + "'");
    ByteReader r(payload);
    if (tag == "TRNS") {
      b.transforms = DataTransformer::deserialize(r);
      have[0] = true;
    } else if (tag == "CVAE") {
      b.cvae = CvaeModel::deserialize(r);
      have[1] = true;
    } else if (tag == "ARMD") {
      b.ar = ArDensityModel::deserialize(r);
      have[2] = true;
    } else if (tag == "DISC") {
      b.discretizer = Discretizer::deserialize(r);
    } else if (tag == "META") {
      const auto kind = r.u8();
      if (kind > static_cast<std::uint8_t>(MaskKind::kNone)) throw Error(ErrorCode::kCorruptFile, "bad mask kind");
      b.mask_kind = static_cast<MaskKind>(kind);
      b.summary = r.str();
      have[3] = true;
    } else {
      throw Error(ErrorCode::kCorruptFile, "unknown section '" + tag + "'");
    }
    if (!r.done()) throw Error(ErrorCode::kCorruptFile, "trailing bytes in section '" + tag + "'");
  }
  if (!in.done()) throw Error(ErrorCode::kCorruptFile, "trailing bytes after last section");
  if (!(have[0] && have[1] && have[2] && have[3])) throw Error(ErrorCode::kCorruptFile, "missing section");
  if (b.fingerprint() != stored) throw Error(ErrorCode::kCorruptFile, "schema fingerprint mismatch");
  if (b.cvae.encoded_width != b.transforms.encoded_width())
    throw Error(ErrorCode::kCorruptFile, "generative model does not match the transforms");
  return b;
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  const auto bytes = encode_bundle(bundle);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIoError, "write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_bundle(bytes);
}

// ---------------------------------------------------------------------------
// Sources

Table CvaeSampleSource::generate(const std::vector<EqTerm>& conditions, std::size_t n, Rng& rng) const {
  std::vector<Condition> conds;
  for (const auto& c : conditions) {
    if (!bundle_.transforms.encoder().find(c.column, c.value)) return Table(bundle_.schema());
    conds.emplace_back(c.column, c.value);
  }
  return predaqp::generate(bundle_.cvae, bundle_.transforms, conds, n, rng, DecodeMode::kSample);
}

CountEstimate ArCountSource::count(const std::vector<EqTerm>& conditions, Rng& rng) const {
  std::vector<Condition> conds;
  for (const auto& c : conditions) conds.emplace_back(c.column, c.value);
  const auto est = estimate_conjunction(bundle_.ar, bundle_.transforms.encoder(), conds, walks_, rng);
  const double rows = static_cast<double>(bundle_.table_rows);
  return {est.estimate * rows, est.standard_error * rows, est.not_in_vocabulary};
}

Table OracleSampleSource::generate(const std::vector<EqTerm>& conditions, std::size_t, Rng&) const {
  ++calls_;
  const Conjunction c{conditions, {}};
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < table_.row_count(); ++r)
    if (c.matches_equalities(table_, r)) rows.push_back(r);
  return table_.select(rows);
}

CountEstimate OracleCountSource::count(const std::vector<EqTerm>& conditions, Rng&) const {
  const Conjunction c{conditions, {}};
  std::size_t n = 0;
  for (std::size_t r = 0; r < table_.row_count(); ++r) n += c.matches_equalities(table_, r);
  return {static_cast<double>(n), 0.0, false};
}

// ---------------------------------------------------------------------------
// Execution

double QueryResult::value_or_throw() const {
  if (grouped) throw Error(ErrorCode::kInvalidArgument, "grouped result has no scalar value");
  if (!answered) throw Error(ErrorCode::kUnansweredQuery, "no generated row survived the query's filters");
  return value;
}

namespace {

struct TermValue {
  bool count_ok = false;
  double count = 0.0;
  bool sum_ok = false;
  double sum = 0.0;
  std::size_t survivors = 0;
};

TermValue run_term(const ConjunctiveSubquery& q, bool need_count, const Backend& backend, const ExecuteOptions& opt,
                   Rng& rng, SubqueryDiagnostics& diag) {
  TermValue v;
  const auto& eq = q.conditions.equalities;
  const bool has_ranges = !q.conditions.ranges.empty();
  std::optional<CountEstimate> cnt;
  if (need_count || q.aggregate == Aggregate::kSum) {
    cnt = backend.counter->count(eq, rng);
    diag.count_standard_error = cnt->standard_error;
    if (cnt->not_in_vocabulary || cnt->count <= 0.0) {
      // An empty selection contributes nothing; AVG stays undefined.
      v.count_ok = v.sum_ok = true;
      diag.count = 0.0;
      diag.answered = q.aggregate != Aggregate::kAvg;
      return v;
    }
  }
  const bool generate = q.aggregate != Aggregate::kCount || has_ranges;
  if (!generate) {
    v.count_ok = true;
    v.count = cnt->count;
    diag.count = v.count;
    diag.answered = true;
    return v;
  }

  double sum = 0.0;
  std::size_t matched = 0, survivors = 0, generated = 0;
  auto draw = [&](std::size_t n) {
    const Table rows = backend.generator->generate(eq, n, rng);
    sum = 0.0;
    matched = survivors = 0;
    generated = rows.row_count();
    for (std::size_t r = 0; r < rows.row_count(); ++r) {
      if (!q.conditions.matches_equalities(rows, r)) continue;
      ++matched;
      bool ok = true;
      for (const auto& rg : q.conditions.ranges) ok = ok && rg.contains(rows.numerical(r, rg.column));
      if (!ok) continue;
      ++survivors;
      if (q.target) sum += rows.numerical(r, *q.target);
    }
  };
  draw(opt.n_samples);
  if (survivors < opt.min_survivors) {
    draw(opt.n_samples * opt.regenerate_factor);
    diag.regenerated = true;
    diag.low_confidence = survivors < opt.min_survivors;
  }
  diag.generated = generated;
  diag.matched_equalities = matched;
  diag.survivors = survivors;
  v.survivors = survivors;
  if (survivors > 0 && q.target) diag.avg = sum / static_cast<double>(survivors);

  if (cnt) {
    if (matched > 0) {
      v.count_ok = true;
      v.count = has_ranges ? cnt->count * static_cast<double>(survivors) / static_cast<double>(matched) : cnt->count;
      if (q.target) {
        v.sum_ok = true;
        v.sum = sum * (cnt->count / static_cast<double>(matched));
      }
      diag.count = v.count;
    }
  } else if (survivors > 0) {
    // Single-term AVG: sum / survivors is all that is needed.
    v.sum = sum;
    v.count = static_cast<double>(survivors);
    v.count_ok = v.sum_ok = true;
  }
  diag.answered = q.aggregate == Aggregate::kAvg ? survivors > 0 : v.count_ok;
  return v;
}

struct Combined {
  double value = 0.0;
  bool answered = false;
};

Combined run_terms(const TermSet& set, Aggregate agg, bool grouped, const Backend& backend, const ExecuteOptions& opt,
                   std::uint64_t seed, std::size_t& counter, const Schema& schema,
                   std::vector<SubqueryDiagnostics>& diags) {
  const bool single_avg = agg == Aggregate::kAvg && set.terms.size() == 1;
  double num = 0.0, den = 0.0, total = 0.0;
  bool ok = true;
  std::size_t survivors = 0;
  for (const auto& q : set.terms) {
    Rng rng(derive_seed(seed, counter++));
    SubqueryDiagnostics d;
    d.conditions = render(q.conditions, schema);
    d.sign = q.sign;
    const TermValue v = run_term(q, !single_avg, backend, opt, rng, d);
    diags.push_back(std::move(d));
    if (q.sign > 0) survivors += v.survivors;
    switch (agg) {
      case Aggregate::kCount:
        ok = ok && v.count_ok;
        total += q.sign * v.count;
        break;
      case Aggregate::kSum:
        ok = ok && v.sum_ok;
        total += q.sign * v.sum;
        break;
      case Aggregate::kAvg:
        // Terms without survivors are excluded from the weighting.
        if (v.count_ok && v.sum_ok && v.survivors > 0) {
          num += q.sign * v.sum;
          den += q.sign * v.count;
        }
        break;
    }
  }
  Combined out;
  switch (agg) {
    case Aggregate::kCount:
      out.value = total;
      out.answered = ok && (!grouped || total > 0.0);
      break;
    case Aggregate::kSum:
      out.value = total;
      out.answered = ok && (!grouped || survivors > 0);
      break;
    case Aggregate::kAvg:
      out.answered = den > 0.0;
      out.value = out.answered ? num / den : 0.0;
      break;
  }
  return out;
}

}  // namespace

void order_and_limit(std::vector<GroupResult>& groups, const std::optional<OrderBy>& order_by,
                     const std::vector<std::size_t>& group_by, std::optional<std::size_t> limit) {
  std::stable_sort(groups.begin(), groups.end(), [](const GroupResult& a, const GroupResult& b) { return a.key < b.key; });
  if (order_by) {
    std::size_t pos = 0;
    if (order_by->column) pos = static_cast<std::size_t>(std::find(group_by.begin(), group_by.end(), *order_by->column) - group_by.begin());
    const bool desc = order_by->descending;
    std::stable_sort(groups.begin(), groups.end(), [&](const GroupResult& a, const GroupResult& b) {
      if (order_by->column) return desc ? b.key[pos] < a.key[pos] : a.key[pos] < b.key[pos];
      return desc ? b.value < a.value : a.value < b.value;
    });
  }
  if (limit && groups.size() > *limit) groups.resize(*limit);
}

QueryResult execute(const QueryPlan& plan, const Backend& backend, const ExecuteOptions& options, Rng& rng) {
  if (!backend.generator || !backend.counter || !backend.schema)
    throw Error(ErrorCode::kInvalidArgument, "backend is incomplete");
  QueryResult result;
  const std::uint64_t seed = rng();
  std::size_t counter = 0;
  if (!plan.grouped()) {
    const auto c = run_terms(plan.scalar, plan.aggregate, false, backend, options, seed, counter, *backend.schema,
                             result.diagnostics);
    result.value = c.value;
    result.answered = c.answered;
    return result;
  }
  result.grouped = true;
  for (const auto& g : plan.groups) {
    const auto c = run_terms(g.terms, plan.aggregate, true, backend, options, seed, counter, *backend.schema,
                             result.diagnostics);
    GroupResult gr;
    for (const auto& k : g.key) gr.key.push_back(k.value);
    gr.value = c.value;
    gr.answered = c.answered;
    (c.answered ? result.groups : result.unanswered).push_back(std::move(gr));
  }
  result.answered = !result.groups.empty();
  order_and_limit(result.groups, plan.order_by, plan.group_by, plan.limit);
  return result;
}

QueryResult answer(const std::string& sql, const ModelBundle& bundle, const ExecuteOptions& options, Rng& rng,
                   std::size_t walks) {
  const QueryAst ast = parse(sql, bundle.schema());
  PlanOptions popt;
  popt.cap = options.dnf_cap;
  if (bundle.discretizer) popt.discretizer = &*bundle.discretizer;
  const QueryPlan qp = plan(ast, to_dnf(ast.where, options.dnf_cap), bundle.transforms.encoder(), popt);
  const CvaeSampleSource gen(bundle);
  const ArCountSource cnt(bundle, walks);
  const Backend backend{&gen, &cnt, &bundle.schema()};
  return execute(qp, backend, options, rng);
}

std::string format_result(const QueryResult& r, bool with_diagnostics) {
  std::ostringstream out;
  out.precision(10);
  if (!r.grouped) {
    if (r.answered) {
      out << r.value << "\n";
    } else {
      out << "(unanswered: no generated row survived the filters)\n";
    }
  } else {
    for (const auto& g : r.groups) {
      for (const auto& k : g.key) out << k << "\t";
      out << g.value << "\n";
    }
    for (const auto& g : r.unanswered) {
      for (const auto& k : g.key) out << k << "\t";
      out << "(unanswered)\n";
    }
  }
  if (with_diagnostics) {
    for (const auto& d : r.diagnostics) {
      out << "  [" << (d.sign > 0 ? "+" : "-") << "] " << d.conditions << ": generated " << d.generated
          << ", matched " << d.matched_equalities << ", survivors " << d.survivors;
      if (d.count) out << ", count " << *d.count << " (se " << d.count_standard_error << ")";
      if (d.avg) out << ", avg " << *d.avg;
      if (d.regenerated) out << ", regenerated";
      if (d.low_confidence) out << ", low confidence";
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace predaqp
