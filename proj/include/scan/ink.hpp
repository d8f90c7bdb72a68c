#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "scan/errors.hpp"

namespace scan {

struct TracePoint {
    double x = 0.0;
    double y = 0.0;
    int stroke_id = 0;
};

// Token string <-> id table. Ids are line numbers of the vocabulary file.
class Vocabulary {
  public:
    Vocabulary() = default;

    // One token per line, 0-based line number is the id. "<sos>" and "<eos>"
    // are mandatory entries. An optional first line "structural: tok tok ..."
    // declares the structural-token set.
    static Vocabulary load(const std::string& path);
    static Vocabulary from_tokens(const std::vector<std::string>& tokens,
                                  const std::vector<std::string>& structural = {});

    int id(const std::string& token) const;
    const std::string& token(int id) const;
    bool contains(const std::string& token) const;
    int size() const { return static_cast<int>(tokens_.size()); }

    int sos() const { return sos_; }
    int eos() const { return eos_; }
    bool is_structural(int id) const { return structural_.count(id) > 0; }
    const std::set<int>& structural_ids() const { return structural_; }

  private:
    void finish();

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    std::set<int> structural_;
    int sos_ = -1;
    int eos_ = -1;
};

// One corpus unit: the raw strokes, the LaTeX token ids and (optionally)
// which strokes belong to which output token.
struct Expression {
    std::vector<TracePoint> points;                // ordered, strokes contiguous
    int num_strokes = 0;                           // M
    std::vector<int> tokens;                       // no sos/eos
    std::map<int, std::set<int>> alignment;        // token position -> stroke ids

    int num_points() const { return static_cast<int>(points.size()); }
    bool has_alignment() const { return !alignment.empty(); }

    // Point index range [first, last) of one stroke.
    std::pair<int, int> stroke_span(int stroke) const;

    // Checks the structural invariants (dense contiguous strokes, alignment
    // referencing valid strokes at most once). Throws DataError on violation.
    void validate() const;
};

// Whitespace tokenization against the vocabulary; commands like \frac are
// single tokens. Unknown token -> DataError naming it.
std::vector<int> tokenize_latex(const std::string& label, const Vocabulary& vocab);

// CROHME-style InkML subset: trace, traceGroup, annotation(type="truth"),
// annotationXML. Strokes renumbered densely in first-appearance order.
Expression parse_inkml(const std::string& document, const Vocabulary& vocab);

// Line-oriented native format:
//   strokes M points N
//   x y stroke_id            (N lines)
//   label tok tok ...
//   tokpos: id id ...        (optional alignment lines)
Expression parse_native(const std::string& text, const Vocabulary& vocab);

// Canonical native-format serialization; parse_native(serialize_native(e))
// round-trips bit-exactly.
std::string serialize_native(const Expression& e, const Vocabulary& vocab);

Expression load_expression_file(const std::string& path, const Vocabulary& vocab);

}  // namespace scan
