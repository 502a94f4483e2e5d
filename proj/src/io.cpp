#include "btdvar/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>
#include <system_error>

namespace btdvar {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::optional<double> parse_double(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) {
        ++b;
    }
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) {
        --e;
    }
    if (b == e) {
        return std::nullopt;
    }
    if (s[b] == '+') {
        ++b;
    }
    double v = 0.0;
    const auto res = std::from_chars(s.data() + b, s.data() + e, v);
    if (res.ec != std::errc() || res.ptr != s.data() + e) {
        return std::nullopt;
    }
    return v;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cell);
            cell.clear();
        } else if (ch != '\r') {
            cell.push_back(ch);
        }
    }
    out.push_back(cell);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) {
            throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
        }
    }
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
    ensure_parent(path);
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    return out;
}

// Written next to the target, then renamed, so an interrupted write never
// leaves a truncated file behind.
void replace_file(const fs::path& tmp, const fs::path& path) {
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::string subject_tag(std::size_t i) {
    std::string n = std::to_string(i + 1);
    return n.size() < 2 ? "0" + n : n;
}

std::vector<std::string> series_names(const std::vector<std::string>& names, Index k) {
    if (static_cast<Index>(names.size()) == k) {
        return names;
    }
    std::vector<std::string> out;
    for (Index c = 0; c < k; ++c) {
        out.push_back("y" + std::to_string(c + 1));
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// CSV

Table read_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    Table t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        auto cells = split_csv_line(line);
        for (auto& c : cells) {
            c = trim(c);
        }
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size()) {
            throw IoError(path.string() + ": line " + std::to_string(line_no) + " has " +
                          std::to_string(cells.size()) + " fields, expected " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    if (t.header.empty()) {
        throw IoError(path.string() + ": empty file");
    }
    return t;
}

void write_table(const fs::path& path, const Table& table) {
    auto out = open_out(path);
    auto emit = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            out << (i ? "," : "") << cells[i];
        }
        out << '\n';
    };
    emit(table.header);
    for (const auto& r : table.rows) {
        emit(r);
    }
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

NamedMatrix read_matrix_csv(const fs::path& path) {
    const Table t = read_table(path);
    NamedMatrix m;
    m.names = t.header;
    m.values.resize(static_cast<Index>(t.rows.size()), static_cast<Index>(t.header.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        for (std::size_t c = 0; c < t.header.size(); ++c) {
            const auto v = parse_double(t.rows[r][c]);
            if (!v || !std::isfinite(*v)) {
                // +2: one for the header line, one for one-based numbering.
                throw IoError(path.string() + ": row " + std::to_string(r + 2) + ", column '" + t.header[c] +
                              "': not a finite number ('" + t.rows[r][c] + "')");
            }
            m.values(static_cast<Index>(r), static_cast<Index>(c)) = *v;
        }
    }
    return m;
}

void write_matrix_csv(const fs::path& path, const Matrix& m, const std::vector<std::string>& names) {
    if (static_cast<Index>(names.size()) != m.cols()) {
        throw DimensionError("column name count does not match the matrix");
    }
    Table t;
    t.header = names;
    for (Index r = 0; r < m.rows(); ++r) {
        std::vector<std::string> row;
        for (Index c = 0; c < m.cols(); ++c) {
            row.push_back(format_double(m(r, c)));
        }
        t.rows.push_back(std::move(row));
    }
    write_table(path, t);
}

PanelData read_panel(const std::vector<fs::path>& files, Index holdout) {
    if (files.empty()) {
        throw IoError("no subject files given");
    }
    PanelData data;
    data.holdout = holdout;
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (!fs::exists(files[i])) {
            throw IoError("missing file " + files[i].string());
        }
        NamedMatrix m = read_matrix_csv(files[i]);
        if (m.values.rows() == 0) {
            throw IoError(files[i].string() + ": no data rows");
        }
        if (i == 0) {
            data.names = m.names;
        } else if (m.names != data.names) {
            throw IoError("header of " + files[i].string() + " does not match header of " + files[0].string());
        } else if (m.values.rows() != data.y.front().rows()) {
            throw IoError(files[i].string() + " has " + std::to_string(m.values.rows()) + " rows but " +
                          files[0].string() + " has " + std::to_string(data.y.front().rows()));
        }
        data.y.push_back(std::move(m.values));
    }
    if (holdout < 0 || holdout >= data.t()) {
        throw IoError("holdout " + std::to_string(holdout) + " must be smaller than the series length " +
                      std::to_string(data.t()));
    }
    return data;
}

std::vector<fs::path> write_panel(const fs::path& dir, const PanelData& data) {
    data.validate();
    const auto names = series_names(data.names, data.k());
    std::vector<fs::path> out;
    for (std::size_t i = 0; i < data.subjects(); ++i) {
        const fs::path p = dir / ("subject_" + subject_tag(i) + ".csv");
        write_matrix_csv(p, data.y[i], names);
        out.push_back(p);
    }
    return out;
}

std::vector<fs::path> list_csv(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw IoError("data directory " + dir.string() + " does not exist");
    }
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) {
        throw IoError("no .csv files in " + dir.string());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Networks

void write_network_csv(const fs::path& path, const InclusionTensor& v, const EdgeSet& edges) {
    if (v.lags() != edges.lags() || v.k() != edges.k()) {
        throw DimensionError("probabilities and edges differ in shape");
    }
    Table t;
    t.header = {"lag", "target", "source", "probability", "edge"};
    for (Index l = 0; l < v.lags(); ++l) {
        for (Index s = 0; s < v.k(); ++s) {
            for (Index g = 0; g < v.k(); ++g) {
                t.rows.push_back({std::to_string(l + 1), std::to_string(g + 1), std::to_string(s + 1),
                                  format_double(v(l, g, s)), edges(l, g, s) ? "1" : "0"});
            }
        }
    }
    write_table(path, t);
}

NetworkFile read_network_csv(const fs::path& path) {
    const Table t = read_table(path);
    const std::vector<std::string> expected{"lag", "target", "source", "probability", "edge"};
    if (t.header != expected) {
        throw IoError(path.string() + ": expected header lag,target,source,probability,edge");
    }
    struct Cell {
        Index l, g, s;
        double p;
        bool e;
    };
    std::vector<Cell> cells;
    Index lags = 0;
    Index k = 0;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = path.string() + ": row " + std::to_string(r + 2);
        double vals[5];
        for (int c = 0; c < 5; ++c) {
            const auto v = parse_double(row[static_cast<std::size_t>(c)]);
            if (!v) {
                throw IoError(where + ", column '" + expected[static_cast<std::size_t>(c)] + "': not a number");
            }
            vals[c] = *v;
        }
        const Index l = static_cast<Index>(vals[0]);
        const Index g = static_cast<Index>(vals[1]);
        const Index s = static_cast<Index>(vals[2]);
        if (l < 1 || g < 1 || s < 1 || vals[3] < 0.0 || vals[3] > 1.0 || (vals[4] != 0.0 && vals[4] != 1.0)) {
            throw IoError(where + ": index, probability or edge flag out of range");
        }
        cells.push_back({l - 1, g - 1, s - 1, vals[3], vals[4] == 1.0});
        lags = std::max(lags, l);
        k = std::max({k, g, s});
    }
    if (static_cast<Index>(cells.size()) != lags * k * k) {
        throw IoError(path.string() + ": network must list every (lag, target, source) cell exactly once");
    }
    NetworkFile f{InclusionTensor(lags, k), EdgeSet(lags, k)};
    std::vector<char> seen(static_cast<std::size_t>(lags * k * k), 0);
    for (const auto& c : cells) {
        char& mark = seen[static_cast<std::size_t>(c.l * k * k + c.s * k + c.g)];
        if (mark) {
            throw IoError(path.string() + ": duplicate cell");
        }
        mark = 1;
        f.probability(c.l, c.g, c.s) = c.p;
        f.edges.set(c.l, c.g, c.s, c.e);
    }
    return f;
}

void write_composite_csv(const fs::path& path, const EdgeSet& edges, const std::vector<std::string>& names) {
    const auto labels = series_names(names, edges.k());
    const auto comp = edges.composite();
    Table t;
    t.header.push_back("target");
    t.header.insert(t.header.end(), labels.begin(), labels.end());
    for (Index g = 0; g < edges.k(); ++g) {
        std::vector<std::string> row{labels[static_cast<std::size_t>(g)]};
        for (Index s = 0; s < edges.k(); ++s) {
            row.push_back(comp(g, s) ? "1" : "0");
        }
        t.rows.push_back(std::move(row));
    }
    write_table(path, t);
}

std::string to_dot(const EdgeSet& edges, const std::vector<std::string>& names, const std::string& graph_name) {
    const auto labels = series_names(names, edges.k());
    const auto comp = edges.composite();
    std::ostringstream out;
    out << "digraph \"" << graph_name << "\" {\n";
    for (Index c = 0; c < edges.k(); ++c) {
        out << "  n" << c + 1 << " [label=\"" << labels[static_cast<std::size_t>(c)] << "\"];\n";
    }
    for (Index s = 0; s < edges.k(); ++s) {
        for (Index g = 0; g < edges.k(); ++g) {
            if (comp(g, s)) {
                out << "  n" << s + 1 << " -> n" << g + 1 << ";\n";
            }
        }
    }
    out << "}\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Configuration

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        if (trim(line).empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        if (kv.count(key)) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
        kv[key] = value;
    }
    return kv;
}

namespace {

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
    T out{};
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& v) {
    const auto d = parse_double(v);
    if (!d || !std::isfinite(*d)) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
    return *d;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

#define BTD_INT(name, member, type)                                                              \
    {                                                                                            \
        name, {                                                                                  \
            [](RunConfig& c, const std::string& v) { c.member = parse_integer<type>(name, v); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }                          \
        }                                                                                        \
    }
#define BTD_REAL(name, member)                                                      \
    {                                                                               \
        name, {                                                                     \
            [](RunConfig& c, const std::string& v) { c.member = parse_real(name, v); }, \
            [](const RunConfig& c) { return format_double(c.member); }              \
        }                                                                           \
    }
#define BTD_TEXT(name, member)                                             \
    {                                                                      \
        name, {                                                            \
            [](RunConfig& c, const std::string& v) { c.member = v; },      \
            [](const RunConfig& c) { return c.member; }                    \
        }                                                                  \
    }
#define BTD_BOOL(name, member)                                                      \
    {                                                                               \
        name, {                                                                     \
            [](RunConfig& c, const std::string& v) { c.member = parse_bool(name, v); }, \
            [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); } \
        }                                                                           \
    }

const std::vector<std::pair<std::string, Field>>& schema() {
    static const std::vector<std::pair<std::string, Field>> fields = {
        // one seed drives both the simulator and the chain
        {"seed",
         {[](RunConfig& c, const std::string& v) { c.seed = c.sampler.seed = parse_integer<std::uint64_t>("seed", v); },
          [](const RunConfig& c) { return std::to_string(c.seed); }}},
        BTD_TEXT("scenario", scenario),
        BTD_INT("k", k, Index),
        BTD_INT("lags_true", lags_true, Index),
        BTD_INT("subjects", subjects, std::size_t),
        BTD_INT("t", t, Index),
        BTD_INT("holdout", holdout, Index),
        BTD_INT("sim_burn_in", sim_burn_in, Index),
        BTD_REAL("random_scale", random_scale),
        BTD_REAL("alpha_scale", alpha_scale),
        BTD_TEXT("data_dir", data_dir),
        BTD_INT("lags", sampler.lags, Index),
        BTD_INT("r1", sampler.ranks[0], Index),
        BTD_INT("r2", sampler.ranks[1], Index),
        BTD_INT("r3", sampler.ranks[2], Index),
        BTD_INT("iterations", sampler.iterations, int),
        BTD_INT("burn_in", sampler.burn_in, int),
        BTD_INT("thin", sampler.thin, int),
        BTD_BOOL("prune", sampler.prune_enabled),
        BTD_REAL("prune_threshold", sampler.prune_threshold),
        BTD_INT("prune_window", sampler.prune_window, int),
        BTD_REAL("a1", sampler.hyper.a1),
        BTD_REAL("a2", sampler.hyper.a2),
        BTD_REAL("a_sigma", sampler.hyper.a_sigma),
        BTD_REAL("b_sigma", sampler.hyper.b_sigma),
        BTD_BOOL("random_effects", sampler.random_effects),
        BTD_INT("checkpoint_every", checkpoint_every, int),
        BTD_TEXT("draws", draws),
        BTD_TEXT("truth", truth),
        BTD_TEXT("network", network),
        BTD_REAL("delta", decision.delta),
        BTD_REAL("c", decision.c),
    };
    return fields;
}

#undef BTD_INT
#undef BTD_REAL
#undef BTD_TEXT
#undef BTD_BOOL

}  // namespace

RunConfig parse_run_config(const std::map<std::string, std::string>& kv, const std::string& mode) {
    RunConfig cfg;
    cfg.mode = mode;
    const auto& fields = schema();
    for (const auto& [key, value] : kv) {
        // Manifests are valid configs: their run records are skipped.
        if (key == "version" || key.rfind("result.", 0) == 0) {
            continue;
        }
        if (key == "mode") {
            if (value != mode) {
                throw ConfigError("config was written for mode '" + value + "', not '" + mode + "'");
            }
            continue;
        }
        const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == key; });
        if (it == fields.end()) {
            throw ConfigError("unknown key '" + key + "'");
        }
        it->second.set(cfg, value);
        cfg.given[key] = value;
    }
    return cfg;
}

RunConfig load_run_config(const fs::path& path, const std::string& mode) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(parse_key_values(buf.str(), path.string()), mode);
}

std::vector<std::pair<std::string, std::string>> RunConfig::resolved() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [key, field] : schema()) {
        out.emplace_back(key, field.get(*this));
    }
    return out;
}

void RunConfig::validate() const {
    auto need = [&](const std::string& v, const char* key) {
        if (v.empty()) {
            throw ConfigError("mode '" + mode + "' requires key '" + key + "'");
        }
    };
    if (mode == "simulate") {
        if (scenario != "block" && scenario != "community") {
            throw ConfigError("scenario must be 'block' or 'community'");
        }
        if (k < 2 || (scenario == "block" && k % 2 != 0)) {
            throw ConfigError("k must be at least 2 (and even for the block scenario)");
        }
        if (lags_true < 1 || subjects < 1 || t < 1 || holdout < 0 || sim_burn_in < 0) {
            throw ConfigError("lags_true, subjects and t must be positive; holdout and sim_burn_in non-negative");
        }
        if (random_scale < 0.0 || alpha_scale < 0.0) {
            throw ConfigError("random_scale and alpha_scale must be non-negative");
        }
    } else if (mode == "fit") {
        need(data_dir, "data_dir");
        if (holdout < 0) {
            throw ConfigError("holdout must be non-negative");
        }
        if (checkpoint_every < 1) {
            throw ConfigError("checkpoint_every must be at least 1");
        }
        try {
            // K is only known once the data are read; check everything else.
            sampler.validate(std::max(sampler.ranks[0], sampler.ranks[1]));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    } else if (mode == "gc") {
        need(draws, "draws");
    } else if (mode == "metrics") {
        need(network, "network");
        need(truth, "truth");
        if (!draws.empty() && data_dir.empty()) {
            throw ConfigError("R^2 needs both 'draws' and 'data_dir'");
        }
    } else {
        throw ConfigError("unknown mode '" + mode + "'");
    }
    if (mode == "gc" || mode == "metrics") {
        try {
            decision.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
}

// ---------------------------------------------------------------------------
// Binary containers
//
// Layout (little-endian): 8-byte magic "BTDVCKPT", u32 version, u32 kind,
// then the payload. Scalars are raw u64 / f64; a matrix is u64 rows, u64
// cols and rows*cols f64 in column-major order; a vector is u64 length plus
// values; a tensor is three u64 dims plus values; a string is u64 length
// plus bytes; a list is u64 count plus its items.

namespace {

constexpr char kMagic[8] = {'B', 'T', 'D', 'V', 'C', 'K', 'P', 'T'};

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void i64(std::int64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void mat(const Matrix& m) {
        u64(static_cast<std::uint64_t>(m.rows()));
        u64(static_cast<std::uint64_t>(m.cols()));
        raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    }
    void vec(const Vector& v) {
        u64(static_cast<std::uint64_t>(v.size()));
        raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
    }
    void tensor(const Tensor3& t) {
        for (Index d : t.dims()) {
            u64(static_cast<std::uint64_t>(d));
        }
        raw(t.values().data(), sizeof(double) * t.values().size());
    }
    void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

private:
    std::ostream& out_;
};

class Reader {
public:
    Reader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::int64_t i64() {
        std::int64_t v;
        raw(&v, sizeof v);
        return v;
    }
    double f64() {
        double v;
        raw(&v, sizeof v);
        return v;
    }
    std::size_t count() {
        const auto n = u64();
        if (n > (std::uint64_t{1} << 32)) {
            fail("implausible element count");
        }
        return static_cast<std::size_t>(n);
    }
    std::string str() {
        std::string s(count(), '\0');
        raw(s.data(), s.size());
        return s;
    }
    Matrix mat() {
        const auto r = static_cast<Index>(count());
        const auto c = static_cast<Index>(count());
        Matrix m(r, c);
        raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
        return m;
    }
    Vector vec() {
        Vector v(static_cast<Index>(count()));
        raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
        return v;
    }
    Tensor3 tensor() {
        Tensor3::Dims d{};
        for (auto& x : d) {
            x = static_cast<Index>(count());
        }
        std::vector<double> vals(static_cast<std::size_t>(d[0] * d[1] * d[2]));
        raw(vals.data(), sizeof(double) * vals.size());
        try {
            return Tensor3::from_values(d, std::move(vals));
        } catch (const std::exception& e) {
            fail(e.what());
        }
    }
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            fail("truncated file");
        }
    }
    [[noreturn]] void fail(const std::string& what) const { throw IoError(origin_ + ": " + what); }

private:
    std::istream& in_;
    std::string origin_;
};

void write_header(Writer& w, ContainerKind kind) {
    w.raw(kMagic, sizeof kMagic);
    const std::uint32_t version = kContainerVersion;
    const auto k = static_cast<std::uint32_t>(kind);
    w.raw(&version, sizeof version);
    w.raw(&k, sizeof k);
}

void read_header(Reader& r, ContainerKind kind) {
    char magic[8];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
        r.fail("not a btdvar container");
    }
    std::uint32_t version = 0;
    std::uint32_t k = 0;
    r.raw(&version, sizeof version);
    r.raw(&k, sizeof k);
    if (version != kContainerVersion) {
        r.fail("unsupported container version " + std::to_string(version));
    }
    if (k != static_cast<std::uint32_t>(kind)) {
        r.fail("container holds a different kind of object");
    }
}

void put_ranks(Writer& w, const std::array<Index, 3>& r) {
    for (Index x : r) {
        w.u64(static_cast<std::uint64_t>(x));
    }
}

std::array<Index, 3> get_ranks(Reader& r) {
    std::array<Index, 3> out{};
    for (auto& x : out) {
        x = static_cast<Index>(r.count());
    }
    return out;
}

void put_state(Writer& w, const PanelState& s) {
    w.mat(s.beta1_fixed);
    w.u64(s.beta1_dev.size());
    for (const auto& d : s.beta1_dev) {
        w.mat(d);
    }
    w.mat(s.beta2);
    w.mat(s.beta3);
    w.tensor(s.core);
    w.vec(s.nu);
    w.u64(s.alpha.size());
    for (const auto& a : s.alpha) {
        w.vec(a);
    }
    const auto& h = s.hyper;
    for (const auto& f : h.factor) {
        w.mat(f.tau2);
        w.mat(f.phi);
        w.f64(f.lambda2);
        w.vec(f.delta);
        w.vec(f.psi);
    }
    w.u64(h.deviation.size());
    for (const auto& d : h.deviation) {
        w.mat(d.tau2);
        w.mat(d.phi);
    }
    for (const auto* e : {&h.core, &h.nu}) {
        w.vec(e->tau2);
        w.vec(e->phi);
        w.f64(e->lambda2);
    }
    for (double v : {h.xi, h.alpha_lambda2, h.alpha_phi, h.sigma2, h.params.a1, h.params.a2, h.params.a_sigma,
                     h.params.b_sigma}) {
        w.f64(v);
    }
}

PanelState get_state(Reader& r) {
    PanelState s;
    s.beta1_fixed = r.mat();
    s.beta1_dev.resize(r.count());
    for (auto& d : s.beta1_dev) {
        d = r.mat();
    }
    s.beta2 = r.mat();
    s.beta3 = r.mat();
    s.core = r.tensor();
    s.nu = r.vec();
    s.alpha.resize(r.count());
    for (auto& a : s.alpha) {
        a = r.vec();
    }
    auto& h = s.hyper;
    for (auto& f : h.factor) {
        f.tau2 = r.mat();
        f.phi = r.mat();
        f.lambda2 = r.f64();
        f.delta = r.vec();
        f.psi = r.vec();
    }
    h.deviation.resize(r.count());
    for (auto& d : h.deviation) {
        d.tau2 = r.mat();
        d.phi = r.mat();
    }
    for (auto* e : {&h.core, &h.nu}) {
        e->tau2 = r.vec();
        e->phi = r.vec();
        e->lambda2 = r.f64();
    }
    for (double* v : {&h.xi, &h.alpha_lambda2, &h.alpha_phi, &h.sigma2, &h.params.a1, &h.params.a2,
                      &h.params.a_sigma, &h.params.b_sigma}) {
        *v = r.f64();
    }
    try {
        s.validate();
    } catch (const std::exception& e) {
        r.fail(std::string("inconsistent state: ") + e.what());
    }
    return s;
}

void put_draws(Writer& w, const PosteriorDraws& p) {
    w.u64(static_cast<std::uint64_t>(p.k));
    w.u64(static_cast<std::uint64_t>(p.lags));
    w.u64(p.subjects);
    w.u64(p.random_effects ? 1 : 0);
    w.u64(p.names.size());
    for (const auto& n : p.names) {
        w.str(n);
    }
    w.u64(p.draws.size());
    for (const auto& d : p.draws) {
        w.mat(d.beta1_fixed);
        w.u64(d.beta1_dev.size());
        for (const auto& m : d.beta1_dev) {
            w.mat(m);
        }
        w.mat(d.beta2);
        w.mat(d.beta3);
        w.tensor(d.core);
        w.vec(d.nu);
        w.u64(d.alpha.size());
        for (const auto& a : d.alpha) {
            w.vec(a);
        }
        w.f64(d.sigma2);
        w.f64(d.spectral_radius);
    }
    w.u64(p.rank_trace.size());
    for (const auto& r : p.rank_trace) {
        put_ranks(w, r);
    }
}

PosteriorDraws get_draws(Reader& r) {
    PosteriorDraws p;
    p.k = static_cast<Index>(r.count());
    p.lags = static_cast<Index>(r.count());
    p.subjects = r.count();
    p.random_effects = r.u64() != 0;
    p.names.resize(r.count());
    for (auto& n : p.names) {
        n = r.str();
    }
    p.draws.resize(r.count());
    for (auto& d : p.draws) {
        d.beta1_fixed = r.mat();
        d.beta1_dev.resize(r.count());
        for (auto& m : d.beta1_dev) {
            m = r.mat();
        }
        d.beta2 = r.mat();
        d.beta3 = r.mat();
        d.core = r.tensor();
        d.nu = r.vec();
        d.alpha.resize(r.count());
        for (auto& a : d.alpha) {
            a = r.vec();
        }
        d.sigma2 = r.f64();
        d.spectral_radius = r.f64();
        if (d.beta1_fixed.rows() != p.k || d.beta3.rows() != p.lags || d.nu.size() != p.k) {
            r.fail("draw shapes do not match the header");
        }
    }
    p.rank_trace.resize(r.count());
    for (auto& x : p.rank_trace) {
        x = get_ranks(r);
    }
    return p;
}

template <class F>
void write_container(const fs::path& path, ContainerKind kind, F&& body) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        auto out = open_out(tmp, true);
        Writer w(out);
        write_header(w, kind);
        body(w);
        out.flush();
        if (!out) {
            throw IoError("write failed for " + tmp.string());
        }
    }
    replace_file(tmp, path);
}

template <class F>
auto read_container(const fs::path& path, ContainerKind kind, F&& body) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    Reader r(in, path.string());
    read_header(r, kind);
    return body(r);
}

}  // namespace

void save_chain(const fs::path& path, const ChainState& chain) {
    write_container(path, ContainerKind::chain, [&](Writer& w) {
        put_state(w, chain.state);
        w.str(chain.rng_state);
        w.i64(chain.iteration);
        put_draws(w, chain.draws);
        for (const auto& v : chain.window.fixed) {
            w.vec(v);
        }
        w.u64(chain.window.deviation.size());
        for (const auto& v : chain.window.deviation) {
            w.vec(v);
        }
        w.i64(chain.window.samples);
        w.u64(chain.rank_events.size());
        for (const auto& e : chain.rank_events) {
            put_ranks(w, e.before);
            put_ranks(w, e.after);
            for (const auto& d : e.dropped) {
                w.u64(d.size());
                for (Index c : d) {
                    w.u64(static_cast<std::uint64_t>(c));
                }
            }
            w.u64(e.refused_empty ? 1 : 0);
        }
    });
}

ChainState load_chain(const fs::path& path) {
    return read_container(path, ContainerKind::chain, [](Reader& r) {
        ChainState c;
        c.state = get_state(r);
        c.rng_state = r.str();
        c.iteration = static_cast<int>(r.i64());
        c.draws = get_draws(r);
        for (auto& v : c.window.fixed) {
            v = r.vec();
        }
        c.window.deviation.resize(r.count());
        for (auto& v : c.window.deviation) {
            v = r.vec();
        }
        c.window.samples = static_cast<int>(r.i64());
        c.rank_events.resize(r.count());
        for (auto& e : c.rank_events) {
            e.before = get_ranks(r);
            e.after = get_ranks(r);
            for (auto& d : e.dropped) {
                d.resize(r.count());
                for (auto& x : d) {
                    x = static_cast<Index>(r.count());
                }
            }
            e.refused_empty = r.u64() != 0;
        }
        return c;
    });
}

void save_draws(const fs::path& path, const PosteriorDraws& draws) {
    write_container(path, ContainerKind::draws, [&](Writer& w) { put_draws(w, draws); });
}

PosteriorDraws load_draws(const fs::path& path) {
    return read_container(path, ContainerKind::draws, [](Reader& r) { return get_draws(r); });
}

}  // namespace btdvar
