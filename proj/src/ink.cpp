#include "scan/ink.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

namespace scan {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// Shortest exact decimal form of a double (round-trip safe), so that
// serialize(parse(serialize(e))) is byte-identical.
std::string format_real(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

}  // namespace

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    std::vector<std::string> structural;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first && line.rfind("structural:", 0) == 0) {
            structural = split_ws(line.substr(11));
            first = false;
            continue;
        }
        first = false;
        if (line.empty()) continue;
        if (v.ids_.count(line))
            throw DataError("duplicate vocabulary token: " + line);
        v.ids_[line] = static_cast<int>(v.tokens_.size());
        v.tokens_.push_back(line);
    }
    for (const auto& s : structural) {
        auto it = v.ids_.find(s);
        if (it == v.ids_.end())
            throw DataError("structural token not in vocabulary: " + s);
        v.structural_.insert(it->second);
    }
    v.finish();
    return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens,
                                   const std::vector<std::string>& structural) {
    Vocabulary v;
    for (const auto& t : tokens) {
        if (v.ids_.count(t)) throw DataError("duplicate vocabulary token: " + t);
        v.ids_[t] = static_cast<int>(v.tokens_.size());
        v.tokens_.push_back(t);
    }
    for (const auto& s : structural) {
        auto it = v.ids_.find(s);
        if (it == v.ids_.end())
            throw DataError("structural token not in vocabulary: " + s);
        v.structural_.insert(it->second);
    }
    v.finish();
    return v;
}

void Vocabulary::finish() {
    auto s = ids_.find("<sos>");
    auto e = ids_.find("<eos>");
    if (s == ids_.end() || e == ids_.end())
        throw DataError("vocabulary must contain <sos> and <eos>");
    sos_ = s->second;
    eos_ = e->second;
}

int Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw DataError("unknown token: " + token);
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size())
        throw DataError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
    return ids_.count(token) > 0;
}

std::vector<int> tokenize_latex(const std::string& label, const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const auto& tok : split_ws(label)) ids.push_back(vocab.id(tok));
    return ids;
}

std::pair<int, int> Expression::stroke_span(int stroke) const {
    int first = -1, last = -1;
    for (int i = 0; i < num_points(); ++i) {
        if (points[static_cast<size_t>(i)].stroke_id == stroke) {
            if (first < 0) first = i;
            last = i;
        }
    }
    if (first < 0) throw DataError("stroke has no points: " + std::to_string(stroke));
    return {first, last + 1};
}

void Expression::validate() const {
    std::vector<int> counts(static_cast<size_t>(num_strokes), 0);
    int prev = -1;
    for (const auto& p : points) {
        if (p.stroke_id < 0 || p.stroke_id >= num_strokes)
            throw DataError("point references stroke out of range");
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw DataError("non-finite coordinate");
        if (p.stroke_id != prev) {
            if (p.stroke_id < prev || (p.stroke_id < num_strokes &&
                                       counts[static_cast<size_t>(p.stroke_id)] > 0))
                throw DataError("stroke points are not contiguous");
            prev = p.stroke_id;
        }
        counts[static_cast<size_t>(p.stroke_id)]++;
    }
    for (int j = 0; j < num_strokes; ++j)
        if (counts[static_cast<size_t>(j)] == 0)
            throw DataError("stroke owns no points: " + std::to_string(j));
    std::set<int> seen;
    for (const auto& [pos, strokes] : alignment) {
        if (pos < 0 || pos >= static_cast<int>(tokens.size()))
            throw DataError("alignment token position out of range");
        for (int s : strokes) {
            if (s < 0 || s >= num_strokes)
                throw DataError("alignment references stroke out of range: " +
                                std::to_string(s));
            if (!seen.insert(s).second)
                throw DataError("stroke aligned to two token positions: " +
                                std::to_string(s));
        }
    }
}

// ---------------------------------------------------------------------------
// InkML subset reader. A deliberately small XML scanner: elements, attributes,
// text content, comments and XML declarations. No entities beyond the five
// predefined ones, no CDATA, no namespaces handling beyond literal names.
// ---------------------------------------------------------------------------

namespace {

struct XmlNode {
    std::string name;
    std::map<std::string, std::string> attrs;
    std::string text;                  // concatenated direct text content
    std::vector<XmlNode> children;
};

class XmlScanner {
  public:
    explicit XmlScanner(const std::string& s) : s_(s) {}

    XmlNode parse_document() {
        skip_misc();
        XmlNode root = parse_element();
        skip_misc();
        if (pos_ != s_.size()) fail("trailing content after root element");
        return root;
    }

  private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError("malformed XML: " + msg, line_, col_);
    }

    bool eof() const { return pos_ >= s_.size(); }
    char peek() const { return eof() ? '\0' : s_[pos_]; }

    char get() {
        if (eof()) fail("unexpected end of input");
        char c = s_[pos_++];
        if (c == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        return c;
    }

    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        get();
    }

    void skip_ws() {
        while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) get();
    }

    bool starts_with(const char* lit) const {
        return s_.compare(pos_, std::strlen(lit), lit) == 0;
    }

    void skip_until(const char* lit) {
        size_t at = s_.find(lit, pos_);
        if (at == std::string::npos) fail(std::string("unterminated '") + lit + "'");
        while (pos_ < at + std::strlen(lit)) get();
    }

    // whitespace, comments, <?...?> declarations, <!DOCTYPE ...>
    void skip_misc() {
        for (;;) {
            skip_ws();
            if (starts_with("<!--")) {
                skip_until("-->");
            } else if (starts_with("<?")) {
                skip_until("?>");
            } else if (starts_with("<!")) {
                skip_until(">");
            } else {
                return;
            }
        }
    }

    std::string parse_name() {
        std::string name;
        while (!eof()) {
            char c = peek();
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
                c == '-' || c == ':' || c == '.') {
                name += get();
            } else {
                break;
            }
        }
        if (name.empty()) fail("expected a name");
        return name;
    }

    std::string decode_entities(const std::string& raw) {
        std::string out;
        for (size_t i = 0; i < raw.size(); ++i) {
            if (raw[i] != '&') {
                out += raw[i];
                continue;
            }
            size_t semi = raw.find(';', i);
            if (semi == std::string::npos) fail("unterminated entity");
            std::string ent = raw.substr(i + 1, semi - i - 1);
            if (ent == "lt") out += '<';
            else if (ent == "gt") out += '>';
            else if (ent == "amp") out += '&';
            else if (ent == "quot") out += '"';
            else if (ent == "apos") out += '\'';
            else fail("unknown entity: &" + ent + ";");
            i = semi;
        }
        return out;
    }

    XmlNode parse_element() {
        expect('<');
        XmlNode node;
        node.name = parse_name();
        for (;;) {
            skip_ws();
            char c = peek();
            if (c == '>') {
                get();
                break;
            }
            if (c == '/') {
                get();
                expect('>');
                return node;  // self-closing
            }
            std::string attr = parse_name();
            skip_ws();
            expect('=');
            skip_ws();
            char q = peek();
            if (q != '"' && q != '\'') fail("expected quoted attribute value");
            get();
            std::string val;
            while (peek() != q) val += get();
            get();
            node.attrs[attr] = decode_entities(val);
        }
        // content
        for (;;) {
            if (eof()) fail("unterminated element <" + node.name + ">");
            if (starts_with("<!--")) {
                skip_until("-->");
                continue;
            }
            if (starts_with("</")) {
                get();
                get();
                std::string close = parse_name();
                if (close != node.name)
                    fail("mismatched closing tag </" + close + "> for <" +
                         node.name + ">");
                skip_ws();
                expect('>');
                return node;
            }
            if (peek() == '<') {
                node.children.push_back(parse_element());
                continue;
            }
            std::string text;
            while (!eof() && peek() != '<') text += get();
            node.text += decode_entities(text);
        }
    }

    const std::string& s_;
    size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
};

std::vector<TracePoint> parse_trace_points(const std::string& content, int line_hint) {
    std::vector<TracePoint> pts;
    std::istringstream ss(content);
    std::string chunk;
    while (std::getline(ss, chunk, ',')) {
        chunk = trim(chunk);
        if (chunk.empty()) continue;
        std::istringstream ps(chunk);
        double x, y;
        if (!(ps >> x >> y))
            throw ParseError("bad trace point '" + chunk + "'", line_hint, 0);
        // extra per-point channels (time, pressure) are ignored
        pts.push_back({x, y, 0});
    }
    return pts;
}

void collect_trace_groups(const XmlNode& node, std::vector<const XmlNode*>& out) {
    for (const auto& c : node.children) {
        if (c.name == "traceGroup") {
            bool has_view = false;
            for (const auto& g : c.children)
                if (g.name == "traceView" || g.name == "trace") has_view = true;
            if (has_view) out.push_back(&c);
            collect_trace_groups(c, out);
        }
    }
}

}  // namespace

Expression parse_inkml(const std::string& document, const Vocabulary& vocab) {
    XmlScanner scanner(document);
    XmlNode root = scanner.parse_document();

    // Traces in document order; original ids remembered for references.
    std::vector<const XmlNode*> traces;
    std::string truth;
    std::function<void(const XmlNode&)> walk = [&](const XmlNode& n) {
        for (const auto& c : n.children) {
            if (c.name == "trace") {
                traces.push_back(&c);
            } else if (c.name == "annotation") {
                auto it = c.attrs.find("type");
                if (it != c.attrs.end() && it->second == "truth" && truth.empty())
                    truth = trim(c.text);
            }
            if (c.name != "traceGroup") walk(c);
        }
    };
    walk(root);
    if (traces.empty()) throw DataError("empty expression: no trace elements");

    Expression e;
    std::map<std::string, int> dense_id;  // original id -> renumbered
    for (const auto* t : traces) {
        int sid = static_cast<int>(dense_id.size());
        std::string orig;
        auto it = t->attrs.find("id");
        if (it == t->attrs.end()) it = t->attrs.find("xml:id");
        orig = it != t->attrs.end() ? it->second : ("#" + std::to_string(sid));
        if (dense_id.count(orig))
            throw DataError("duplicate trace id: " + orig);
        dense_id[orig] = sid;
        auto pts = parse_trace_points(t->text, 0);
        if (pts.empty()) throw DataError("trace with no points: " + orig);
        for (auto& p : pts) {
            p.stroke_id = sid;
            e.points.push_back(p);
        }
    }
    e.num_strokes = static_cast<int>(dense_id.size());
    if (!truth.empty()) {
        std::string label = truth;
        if (label.size() >= 2 && label.front() == '$' && label.back() == '$')
            label = trim(label.substr(1, label.size() - 2));
        e.tokens = tokenize_latex(label, vocab);
    }

    // Symbol-level traceGroups -> alignment. Groups appear in symbol order;
    // each is matched greedily to the next token position with its label.
    std::vector<const XmlNode*> groups;
    collect_trace_groups(root, groups);
    size_t cursor = 0;
    for (const auto* g : groups) {
        std::string label;
        for (const auto& c : g->children) {
            if (c.name == "annotation") {
                auto it = c.attrs.find("type");
                if (it != c.attrs.end() && it->second == "truth") {
                    label = trim(c.text);
                    break;
                }
            }
        }
        if (label.empty()) {
            for (const auto& c : g->children)
                if (c.name == "annotationXML") {
                    auto it = c.attrs.find("href");
                    if (it != c.attrs.end()) label = it->second;
                }
        }
        std::set<int> strokes;
        for (const auto& c : g->children) {
            std::string ref;
            if (c.name == "traceView") {
                auto it = c.attrs.find("traceDataRef");
                if (it != c.attrs.end()) ref = it->second;
            } else if (c.name == "trace") {
                continue;  // inline traces already collected by document walk
            }
            if (ref.empty()) continue;
            if (!ref.empty() && ref[0] == '#') ref = ref.substr(1);
            auto it = dense_id.find(ref);
            if (it == dense_id.end())
                throw DataError("traceGroup references unknown trace id: " + ref);
            strokes.insert(it->second);
        }
        if (label.empty() || strokes.empty() || !vocab.contains(label)) continue;
        int want = vocab.id(label);
        for (size_t p = cursor; p < e.tokens.size(); ++p) {
            if (e.tokens[p] == want) {
                e.alignment[static_cast<int>(p)] = strokes;
                cursor = p + 1;
                break;
            }
        }
    }

    e.validate();
    return e;
}

Expression parse_native(const std::string& text, const Vocabulary& vocab) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!trim(line).empty()) return true;
        }
        return false;
    };

    if (!next_line()) throw ParseError("empty native file", 1, 1);
    int M = 0, N = 0;
    {
        std::istringstream hs(line);
        std::string kw1, kw2;
        if (!(hs >> kw1 >> M >> kw2 >> N) || kw1 != "strokes" || kw2 != "points")
            throw ParseError("expected header 'strokes M points N'", lineno, 1);
    }
    if (M <= 0 || N <= 0)
        throw ParseError("stroke and point counts must be positive", lineno, 1);

    Expression e;
    e.num_strokes = M;
    for (int i = 0; i < N; ++i) {
        if (!next_line()) throw ParseError("missing point line", lineno + 1, 1);
        std::istringstream ps(line);
        TracePoint p;
        std::string extra;
        if (!(ps >> p.x >> p.y >> p.stroke_id) || (ps >> extra))
            throw ParseError("point line must be 'x y stroke_id'", lineno, 1);
        e.points.push_back(p);
    }

    if (!next_line()) throw ParseError("missing label line", lineno + 1, 1);
    if (line.rfind("label", 0) != 0)
        throw ParseError("expected 'label ...' line", lineno, 1);
    e.tokens = tokenize_latex(trim(line.substr(5)), vocab);

    while (next_line()) {
        size_t colon = line.find(':');
        if (colon == std::string::npos)
            throw ParseError("expected 'tokpos: id id ...'", lineno, 1);
        int pos = 0;
        try {
            pos = std::stoi(line.substr(0, colon));
        } catch (const std::exception&) {
            throw ParseError("bad token position in alignment line", lineno, 1);
        }
        std::set<int> strokes;
        std::istringstream as(line.substr(colon + 1));
        int sid;
        while (as >> sid) {
            if (sid < 0 || sid >= M)
                throw DataError("alignment references unknown stroke " +
                                std::to_string(sid));
            strokes.insert(sid);
        }
        if (strokes.empty())
            throw ParseError("alignment line with no strokes", lineno, 1);
        e.alignment[pos] = strokes;
    }

    e.validate();
    return e;
}

std::string serialize_native(const Expression& e, const Vocabulary& vocab) {
    std::ostringstream out;
    out << "strokes " << e.num_strokes << " points " << e.num_points() << "\n";
    for (const auto& p : e.points)
        out << format_real(p.x) << " " << format_real(p.y) << " " << p.stroke_id
            << "\n";
    out << "label";
    for (int t : e.tokens) out << " " << vocab.token(t);
    out << "\n";
    for (const auto& [pos, strokes] : e.alignment) {
        out << pos << ":";
        for (int s : strokes) out << " " << s;
        out << "\n";
    }
    return out.str();
}

Expression load_expression_file(const std::string& path, const Vocabulary& vocab) {
    std::string body = read_file(path);
    if (path.size() >= 6 && path.substr(path.size() - 6) == ".inkml")
        return parse_inkml(body, vocab);
    return parse_native(body, vocab);
}

}  // namespace scan
