// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/slice.hpp"

#include "promptlens/hash.hpp"
#include "promptlens/image_io.hpp"
#include "promptlens/math.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace promptlens {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ClassWordSet extract_class_words(const AdapterSet& adapters, const RunConfig& base, int k, bool allow_special) {
  if (k < 1) throw UsageError("k must be >= 1");
  if (base.prompt.mask_count != 1) throw UsageError("word extraction needs a single-mask template");
  const auto& vocab = adapters.masked_lm->tokenizer().vocabulary();
  const auto& tokenizer = adapters.masked_lm->tokenizer();

  RunConfig config = base;
  if (!allow_special)
    for (TokenId t = 0; t < vocab.size(); ++t)
      if (vocab.is_special(t)) config.excluded_tokens.push_back(t);

  ClassWordSet out;
  out.class_index = base.class_index;
  for (int run = 0; run < k; ++run) {
    std::vector<bool> excluded(static_cast<std::size_t>(vocab.size()), false);
    for (TokenId t : config.excluded_tokens) excluded[static_cast<std::size_t>(t)] = true;
    if (std::count(excluded.begin(), excluded.end(), false) == 0)
      throw UsageError("vocabulary exhausted after " + std::to_string(run) + " words");

    const auto record = run_optimization(adapters, config);
    if (record.aborted) throw AdapterError("word extraction run " + std::to_string(run) + " aborted: " +
                                           record.abort_reason);
    WordRun info;
    info.token = record.final_tokens.front();
    if (info.token == kUnset) throw DegenerateResultError("word extraction run produced no token");
    info.word = tokenizer.surface_form(info.token);
    info.steps_to_label = record.first_step_with_labels(record.final_tokens);
    info.best_activation_loss = record.steps.empty() ? kNaN : record.steps.back().best_activation_loss;
    out.words.push_back(info.word);
    out.tokens.push_back(info.token);
    out.runs.push_back(std::move(info));
    config.excluded_tokens.push_back(out.tokens.back());
  }
  return out;
}

std::string wrap_word(std::string_view word, WordWrapping wrapping) {
  if (wrapping == WordWrapping::kBare) return std::string(word);
  return "a photo of a " + std::string(word);
}

Prototype class_prototype(const std::vector<std::string>& words, const JointEncoder& encoder, WordWrapping wrapping) {
  if (words.empty()) throw UsageError("a class prototype needs at least one word");
  Prototype out;
  double norm_sum = 0.0;
  for (const auto& w : words) {
    const Vector e = encoder.encode_text(wrap_word(w, wrapping));
    if (out.embedding.size() == 0) out.embedding = Vector::Zero(e.size());
    if (e.size() != out.embedding.size()) throw AdapterError("text embeddings differ in width");
    out.embedding += e;
    norm_sum += e.norm();
  }
  out.embedding /= static_cast<double>(words.size());
  out.degenerate = out.embedding.norm() <= 1e-12 * std::max(norm_sum / static_cast<double>(words.size()), 1.0);
  return out;
}

namespace {

double median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

std::vector<SliceAssignment> assign_slices(const std::vector<SliceImage>& images,
                                           const std::array<std::optional<Prototype>, 2>& prototypes) {
  if (!prototypes[0] && !prototypes[1]) throw UsageError("at least one class prototype is required");
  for (const auto& p : prototypes)
    if (p && p->degenerate) throw DomainError("class prototype is the zero vector; cosine similarity is undefined");

  std::vector<SliceAssignment> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    if (img.true_class != 0 && img.true_class != 1) throw UsageError("slice assignment supports classes 0 and 1");
    SliceAssignment a;
    a.id = img.id;
    a.true_class = img.true_class;
    const auto& own = prototypes[static_cast<std::size_t>(img.true_class)];
    const auto& other = prototypes[static_cast<std::size_t>(1 - img.true_class)];
    a.own_similarity = own ? cosine_similarity(img.embedding, own->embedding) : kNaN;
    a.counterpart_similarity = other ? cosine_similarity(img.embedding, other->embedding) : kNaN;
    out.push_back(std::move(a));
  }

  // Null-prototype fallback: compare against the class median of the side
  // that exists.
  for (Index c = 0; c < 2; ++c) {
    std::vector<double> own_values, other_values;
    for (const auto& a : out) {
      if (a.true_class != c) continue;
      own_values.push_back(a.own_similarity);
      other_values.push_back(a.counterpart_similarity);
    }
    if (own_values.empty()) continue;
    const bool own_null = !prototypes[static_cast<std::size_t>(c)];
    const bool other_null = !prototypes[static_cast<std::size_t>(1 - c)];
    const double own_ref = other_null ? median(own_values) : kNaN;
    const double other_ref = own_null ? median(other_values) : kNaN;
    for (auto& a : out) {
      if (a.true_class != c) continue;
      const double own_sim = own_null ? other_ref : a.own_similarity;
      const double other_sim = other_null ? own_ref : a.counterpart_similarity;
      if (own_null) a.score = a.counterpart_similarity - other_ref;
      else if (other_null) a.score = own_ref - a.own_similarity;
      else a.score = other_sim - own_sim;
      a.label = a.score > 0 ? SliceLabel::kBiased : SliceLabel::kUnbiased;
    }
  }
  return out;
}

RocCurve roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw UsageError("one ground-truth label per score is required");
  const auto n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const auto n_neg = static_cast<double>(positive.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UsageError("ROC needs at least one positive and one negative");
  for (double s : scores)
    if (std::isnan(s)) throw DomainError("NaN score in ROC input");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == threshold; ++i) (positive[order[i]] ? tp : fp) += 1;
    const RocPoint p{threshold, fp / n_neg, tp / n_pos};
    const RocPoint& prev = curve.points.back();
    curve.auc += (p.false_positive_rate - prev.false_positive_rate) *
                 (p.true_positive_rate + prev.true_positive_rate) / 2;
    curve.points.push_back(p);
  }
  return curve;
}

RocCurve roc_auc(const std::vector<SliceAssignment>& assignments, const std::vector<SliceLabel>& truth) {
  if (assignments.size() != truth.size()) throw UsageError("one ground-truth slice per assignment is required");
  std::vector<double> scores;
  std::vector<bool> positive;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    scores.push_back(assignments[i].score);
    positive.push_back(truth[i] == SliceLabel::kBiased);
  }
  return roc_auc(scores, positive);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  return out;
}

SliceLabel parse_slice(const std::string& s, int line) {
  if (s == "biased" || s == "biased_slice") return SliceLabel::kBiased;
  if (s == "unbiased" || s == "unbiased_slice") return SliceLabel::kUnbiased;
  throw ConfigError("manifest line " + std::to_string(line) + ": slice must be 'biased' or 'unbiased'");
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ConfigError("cannot open manifest " + manifest.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("manifest is empty");
  const auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "path" || header[1] != "class" || (header.size() == 3 && header[2] != "slice") ||
      header.size() > 3)
    throw ConfigError("manifest header must be 'path,class[,slice]'");
  std::vector<ManifestEntry> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size())
      throw ConfigError("manifest line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                        " fields");
    ManifestEntry e;
    e.path = fields[0];
    if (e.path.is_relative()) e.path = manifest.parent_path() / e.path;
    try {
      std::size_t used = 0;
      e.true_class = std::stol(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError("manifest line " + std::to_string(line_no) + ": class must be an integer");
    }
    if (fields.size() == 3 && !fields[2].empty()) e.slice = parse_slice(fields[2], line_no);
    out.push_back(std::move(e));
  }
  return out;
}

EmbeddingCache::EmbeddingCache(std::filesystem::path directory, std::string encoder_id)
    : dir_(std::move(directory)), encoder_id_(std::move(encoder_id)) {
  std::filesystem::create_directories(dir_);
}

Vector EmbeddingCache::embed_file(const std::filesystem::path& image_path, const JointEncoder& encoder) {
  std::ifstream in(image_path, std::ios::binary);
  if (!in) throw ConfigError("cannot open image " + image_path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  const std::string key = sha256_hex(encoder_id_ + '\n' + bytes);
  const auto entry = dir_ / (key + ".json");
  if (std::filesystem::exists(entry)) {
    std::ifstream cached(entry);
    const auto j = nlohmann::json::parse(cached);
    ++hits_;
    return matrix_from_json(j).col(0);
  }
  const Vector e = encoder.encode_image(decode_pfm(bytes));
  const auto tmp = entry.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << matrix_to_json(e);
  }
  std::filesystem::rename(tmp, entry);
  ++misses_;
  return e;
}

int group_index(Index true_class, SliceLabel label) {
  return static_cast<int>(2 * true_class + (label == SliceLabel::kBiased ? 1 : 0));
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

std::string assignments_table(const std::vector<SliceAssignment>& assignments) {
  std::ostringstream out;
  out << "id\ttrue_class\town_similarity\tcounterpart_similarity\tlabel\tscore\n";
  for (const auto& a : assignments)
    out << a.id << '\t' << a.true_class << '\t' << fmt(a.own_similarity) << '\t' << fmt(a.counterpart_similarity)
        << '\t' << (a.label == SliceLabel::kBiased ? "biased_slice" : "unbiased_slice") << '\t' << fmt(a.score)
        << '\n';
  return out.str();
}

std::string roc_table(const RocCurve& curve) {
  std::ostringstream out;
  out << "threshold\tfpr\ttpr\n";
  for (const auto& p : curve.points)
    out << fmt(p.threshold) << '\t' << fmt(p.false_positive_rate) << '\t' << fmt(p.true_positive_rate) << '\n';
  return out.str();
}

std::string group_table(const std::vector<SliceAssignment>& assignments) {
  std::ostringstream out;
  out << "id\tgroup\n";
  for (const auto& a : assignments) out << a.id << '\t' << group_index(a.true_class, a.label) << '\n';
  return out.str();
}

}  // namespace promptlens
