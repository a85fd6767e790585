#include "stgnp/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace stgnp {

std::string to_string(Segment s) {
    switch (s) {
        case Segment::train: return "train";
        case Segment::val: return "val";
        case Segment::test: return "test";
    }
    return "?";
}

Segment parse_segment(const std::string& name) {
    if (name == "train") {
        return Segment::train;
    }
    if (name == "val" || name == "validation") {
        return Segment::val;
    }
    if (name == "test") {
        return Segment::test;
    }
    throw std::invalid_argument("unknown segment '" + name + "' (expected train, val or test)");
}

SplitBounds SplitBounds::sequential(std::size_t steps) {
    SplitBounds b;
    b.total = steps;
    b.train_end = steps * 8 / 10;
    b.val_end = steps * 9 / 10;
    return b;
}

std::size_t SplitBounds::begin(Segment s) const {
    switch (s) {
        case Segment::train: return 0;
        case Segment::val: return train_end;
        case Segment::test: return val_end;
    }
    return 0;
}

std::size_t SplitBounds::end(Segment s) const {
    switch (s) {
        case Segment::train: return train_end;
        case Segment::val: return val_end;
        case Segment::test: return total;
    }
    return 0;
}

std::size_t StDataset::observed_count() const {
    std::size_t n = 0;
    for (double m : mask.values()) {
        n += m != 0.0 ? 1 : 0;
    }
    return n;
}

std::size_t StDataset::node_index(const std::string& id) const {
    const auto it = std::find(node_ids.begin(), node_ids.end(), id);
    if (it == node_ids.end()) {
        throw std::invalid_argument("unknown node id '" + id + "'");
    }
    return static_cast<std::size_t>(it - node_ids.begin());
}

// ---- synthetic -------------------------------------------------------------------

StDataset generate_synthetic(std::size_t n_nodes, std::size_t n_steps, std::uint64_t seed,
                             const SyntheticParams& params) {
    if (n_nodes < 4) {
        throw std::invalid_argument("generate_synthetic: need at least 4 nodes");
    }
    if (n_steps < 10 * params.window) {
        throw std::invalid_argument("generate_synthetic: need at least 10 windows of " +
                                    std::to_string(params.window) + " steps");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    StDataset d;
    const std::size_t width = std::to_string(n_nodes - 1).size();
    for (std::size_t i = 0; i < n_nodes; ++i) {
        std::string id = std::to_string(i);
        d.node_ids.push_back("s" + std::string(width - id.size(), '0') + id);
        const double a = unit(rng);
        const double b = unit(rng);
        d.coords.push_back({a, b});
    }
    std::vector<double> phase(n_nodes);
    for (double& p : phase) {
        p = 2.0 * std::numbers::pi * unit(rng);
    }

    Tensor adj = build_adjacency(d.coords, GraphConfig{});
    for (std::size_t i = 0; i < n_nodes; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n_nodes; ++j) {
            row += adj.at(i, j);
        }
        if (row == 0.0) {
            adj.at(i, i) = 1.0;
            row = 1.0;
        }
        for (std::size_t j = 0; j < n_nodes; ++j) {
            adj.at(i, j) /= row;
        }
    }

    d.y = Tensor(Shape{n_nodes, n_steps, 1});
    d.x = Tensor(Shape{n_nodes, n_steps, 2});
    d.mask = Tensor(Shape{n_nodes, n_steps, 1}, 1.0);
    d.x_mask = Tensor(Shape{n_nodes, n_steps, 2}, 1.0);
    std::vector<double> prev(n_nodes, 0.0), cur(n_nodes);
    const auto first = -static_cast<std::int64_t>(params.burn_in);
    for (std::int64_t t = first; t < static_cast<std::int64_t>(n_steps); ++t) {
        for (std::size_t i = 0; i < n_nodes; ++i) {
            double diffused = 0.0;
            for (std::size_t j = 0; j < n_nodes; ++j) {
                diffused += adj.at(i, j) * prev[j];
            }
            const double season = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 24.0 + phase[i]);
            const double eps = normal(rng);
            const double x_noise = normal(rng);
            cur[i] = params.alpha * diffused + params.beta * season + params.gamma * eps;
            if (t >= 0) {
                const auto tu = static_cast<std::size_t>(t);
                d.y.at(i, tu, 0) = cur[i];
                d.x.at(i, tu, 0) = season;
                d.x.at(i, tu, 1) = x_noise;
            }
        }
        std::swap(prev, cur);
    }
    for (std::size_t t = 0; t < n_steps; ++t) {
        d.timestamps.push_back(std::to_string(t));
    }
    d.split = SplitBounds::sequential(n_steps);
    return d;
}

// ---- CSV -------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

bool parse_double(const std::string& s, double& out) {
    const char* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end && std::isfinite(out);
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

int parse_fixed(const std::string& s, std::size_t pos, std::size_t len) {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
        if (i >= s.size() || !std::isdigit(static_cast<unsigned char>(s[i]))) {
            throw std::invalid_argument("bad timestamp '" + s + "'");
        }
        v = v * 10 + (s[i] - '0');
    }
    return v;
}

// Column positions resolved from the header.
struct CsvLayout {
    std::size_t node = 0, lat = 0, lon = 0, time = 0;
    std::vector<std::size_t> y, x;
    std::size_t width = 0;
};

CsvLayout resolve_header(const std::vector<std::string>& header) {
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (!pos.emplace(header[i], i).second) {
            throw std::invalid_argument("csv: duplicate column '" + header[i] + "'");
        }
    }
    CsvLayout l;
    l.width = header.size();
    std::vector<std::string> missing;
    auto need = [&](const std::string& name, std::size_t& out) {
        const auto it = pos.find(name);
        if (it == pos.end()) {
            missing.push_back(name);
        } else {
            out = it->second;
        }
    };
    need("node_id", l.node);
    need("lat", l.lat);
    need("lon", l.lon);
    need("timestamp", l.time);
    for (std::size_t k = 0; pos.count("y_" + std::to_string(k)); ++k) {
        l.y.push_back(pos.at("y_" + std::to_string(k)));
    }
    for (std::size_t k = 0; pos.count("x_" + std::to_string(k)); ++k) {
        l.x.push_back(pos.at("x_" + std::to_string(k)));
    }
    if (l.y.empty()) {
        missing.push_back("y_0");
    }
    if (!missing.empty()) {
        std::string msg = "csv: missing column(s)";
        for (const auto& m : missing) {
            msg += " " + m;
        }
        throw std::invalid_argument(msg);
    }
    const std::size_t known = 4 + l.y.size() + l.x.size();
    if (known != header.size()) {
        for (const auto& h : header) {
            const bool ok = h == "node_id" || h == "lat" || h == "lon" || h == "timestamp" ||
                            std::any_of(l.y.begin(), l.y.end(), [&](std::size_t i) { return header[i] == h; }) ||
                            std::any_of(l.x.begin(), l.x.end(), [&](std::size_t i) { return header[i] == h; });
            if (!ok) {
                throw std::invalid_argument("csv: unexpected column '" + h + "'");
            }
        }
    }
    return l;
}

struct CsvRow {
    std::size_t line = 0;
    std::int64_t time = 0;
    std::vector<std::string> fields;
};

}  // namespace

std::int64_t parse_timestamp(const std::string& text) {
    const std::string s = trim(text);
    if (s.empty()) {
        throw std::invalid_argument("empty timestamp");
    }
    if (s.find('-', 1) == std::string::npos) {
        std::int64_t v = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size()) {
            throw std::invalid_argument("bad timestamp '" + s + "'");
        }
        return v;
    }
    // YYYY-MM-DD[(T| )HH:MM[:SS[.fff]]][Z]
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') {
        throw std::invalid_argument("bad timestamp '" + s + "'");
    }
    using namespace std::chrono;
    const year_month_day ymd{year{parse_fixed(s, 0, 4)}, month{static_cast<unsigned>(parse_fixed(s, 5, 2))},
                             day{static_cast<unsigned>(parse_fixed(s, 8, 2))}};
    if (!ymd.ok()) {
        throw std::invalid_argument("bad timestamp '" + s + "'");
    }
    std::int64_t secs = sys_days{ymd}.time_since_epoch().count() * 86400LL;
    std::size_t pos = 10;
    if (pos < s.size() && (s[pos] == 'T' || s[pos] == ' ')) {
        if (s.size() < pos + 6 || s[pos + 3] != ':') {
            throw std::invalid_argument("bad timestamp '" + s + "'");
        }
        const int hh = parse_fixed(s, pos + 1, 2);
        const int mm = parse_fixed(s, pos + 4, 2);
        int ss = 0;
        pos += 6;
        if (pos < s.size() && s[pos] == ':') {
            ss = parse_fixed(s, pos + 1, 2);
            pos += 3;
            if (pos < s.size() && s[pos] == '.') {
                ++pos;
                while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
                    ++pos;
                }
            }
        }
        if (hh > 23 || mm > 59 || ss > 60) {
            throw std::invalid_argument("bad timestamp '" + s + "'");
        }
        secs += hh * 3600LL + mm * 60LL + ss;
    }
    if (pos < s.size() && s[pos] == 'Z') {
        ++pos;
    }
    if (pos != s.size()) {
        throw std::invalid_argument("bad timestamp '" + s + "'");
    }
    return secs;
}

StDataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("csv: " + path.string() + " is empty");
    }
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
        line.erase(0, 3);
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    std::vector<std::string> header = split_csv_line(line);
    for (auto& h : header) {
        h = trim(h);
    }
    const CsvLayout layout = resolve_header(header);

    std::map<std::string, std::vector<CsvRow>> by_node;
    std::map<std::int64_t, std::string> stamps;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (trim(line).empty()) {
            continue;
        }
        CsvRow row;
        row.line = line_no;
        row.fields = split_csv_line(line);
        if (row.fields.size() != layout.width) {
            throw std::invalid_argument("csv row " + std::to_string(line_no) + ": expected " +
                                        std::to_string(layout.width) + " fields, got " +
                                        std::to_string(row.fields.size()));
        }
        for (auto& f : row.fields) {
            f = trim(f);
        }
        const std::string& node = row.fields[layout.node];
        if (node.empty()) {
            throw std::invalid_argument("csv row " + std::to_string(line_no) + ": empty node_id");
        }
        try {
            row.time = parse_timestamp(row.fields[layout.time]);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("csv row " + std::to_string(line_no) + ": " + e.what());
        }
        stamps.emplace(row.time, row.fields[layout.time]);
        by_node[node].push_back(std::move(row));
    }
    if (by_node.empty()) {
        throw std::invalid_argument("csv: " + path.string() + " has no data rows");
    }

    std::vector<std::int64_t> grid;
    for (const auto& [t, _] : stamps) {
        grid.push_back(t);
    }
    for (std::size_t i = 2; i < grid.size(); ++i) {
        if (grid[i] - grid[i - 1] != grid[1] - grid[0]) {
            throw std::invalid_argument("csv: irregular time grid between '" + stamps[grid[i - 1]] + "' and '" +
                                        stamps[grid[i]] + "'");
        }
    }

    const std::size_t n = by_node.size();
    const std::size_t steps = grid.size();
    const std::size_t dy = layout.y.size();
    const std::size_t dx = layout.x.size();
    StDataset d;
    d.y = Tensor(Shape{n, steps, dy});
    d.mask = Tensor(Shape{n, steps, dy});
    d.x = Tensor(Shape{n, steps, dx});
    d.x_mask = Tensor(Shape{n, steps, dx});
    for (std::int64_t t : grid) {
        d.timestamps.push_back(stamps[t]);
    }

    std::size_t ni = 0;
    for (auto& [node, rows] : by_node) {
        std::sort(rows.begin(), rows.end(), [](const CsvRow& a, const CsvRow& b) {
            return a.time != b.time ? a.time < b.time : a.line < b.line;
        });
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].time == rows[i - 1].time) {
                throw std::invalid_argument("csv rows " + std::to_string(rows[i - 1].line) + " and " +
                                            std::to_string(rows[i].line) + ": duplicate entry for node '" + node +
                                            "' at timestamp '" + stamps[rows[i].time] + "'");
            }
        }
        if (rows.size() != steps) {
            std::size_t r = 0;
            for (std::int64_t t : grid) {
                if (r < rows.size() && rows[r].time == t) {
                    ++r;
                    continue;
                }
                throw std::invalid_argument("csv: node '" + node + "' has no row for timestamp '" + stamps[t] + "'");
            }
        }

        Coord coord;
        for (std::size_t t = 0; t < steps; ++t) {
            const CsvRow& row = rows[t];
            Coord c;
            if (!parse_double(row.fields[layout.lat], c.a) || !parse_double(row.fields[layout.lon], c.b)) {
                throw std::invalid_argument("csv row " + std::to_string(row.line) + ": bad lat/lon");
            }
            if (t == 0) {
                coord = c;
            } else if (c.a != coord.a || c.b != coord.b) {
                throw std::invalid_argument("csv row " + std::to_string(row.line) + ": lat/lon of node '" + node +
                                            "' differs from row " + std::to_string(rows[0].line));
            }
            auto read = [&](const std::vector<std::size_t>& cols, Tensor& values, Tensor& mask) {
                for (std::size_t k = 0; k < cols.size(); ++k) {
                    const std::string& f = row.fields[cols[k]];
                    if (f.empty()) {
                        continue;
                    }
                    double v = 0.0;
                    if (!parse_double(f, v)) {
                        throw std::invalid_argument("csv row " + std::to_string(row.line) + ": column '" +
                                                    header[cols[k]] + "' is not a number: '" + f + "'");
                    }
                    values.at(ni, t, k) = v;
                    mask.at(ni, t, k) = 1.0;
                }
            };
            read(layout.y, d.y, d.mask);
            read(layout.x, d.x, d.x_mask);
        }
        d.node_ids.push_back(node);
        d.coords.push_back(coord);
        ++ni;
    }
    d.split = SplitBounds::sequential(steps);
    return d;
}

void write_csv(const StDataset& data, const std::filesystem::path& path) {
    if (data.standardized) {
        throw std::invalid_argument("write_csv: dataset is standardized; write the raw data");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "node_id,lat,lon,timestamp";
    for (std::size_t k = 0; k < data.d_y(); ++k) {
        out << ",y_" << k;
    }
    for (std::size_t k = 0; k < data.d_x(); ++k) {
        out << ",x_" << k;
    }
    out << '\n';
    for (std::size_t n = 0; n < data.nodes(); ++n) {
        const std::string lat = format_double(data.coords[n].a);
        const std::string lon = format_double(data.coords[n].b);
        for (std::size_t t = 0; t < data.steps(); ++t) {
            out << data.node_ids[n] << ',' << lat << ',' << lon << ',' << data.timestamps[t];
            for (std::size_t k = 0; k < data.d_y(); ++k) {
                out << ',';
                if (data.mask.at(n, t, k) != 0.0) {
                    out << format_double(data.y.at(n, t, k));
                }
            }
            for (std::size_t k = 0; k < data.d_x(); ++k) {
                out << ',';
                if (data.x_mask.at(n, t, k) != 0.0) {
                    out << format_double(data.x.at(n, t, k));
                }
            }
            out << '\n';
        }
    }
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

// ---- masking and scaling ---------------------------------------------------------

StDataset corrupt_missing(const StDataset& data, double ratio, std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw std::invalid_argument("corrupt_missing: ratio must lie in [0, 1)");
    }
    if (data.standardized) {
        throw std::invalid_argument("corrupt_missing: apply before standardization");
    }
    std::vector<std::size_t> observed;
    for (std::size_t i = 0; i < data.mask.size(); ++i) {
        if (data.mask[i] != 0.0) {
            observed.push_back(i);
        }
    }
    const auto hide = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(observed.size())));
    StDataset out = data;
    if (hide == 0) {
        return out;
    }
    std::mt19937_64 rng(seed);
    std::shuffle(observed.begin(), observed.end(), rng);
    for (std::size_t i = 0; i < hide; ++i) {
        out.y[observed[i]] = 0.0;
        out.mask[observed[i]] = 0.0;
    }
    return out;
}

namespace {

NormStats feature_stats(const Tensor& values, const Tensor& mask, std::size_t train_end) {
    const std::size_t n = values.dim(0), steps = values.dim(1), f = values.dim(2);
    NormStats s{std::vector<double>(f, 0.0), std::vector<double>(f, 1.0)};
    for (std::size_t k = 0; k < f; ++k) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t t = 0; t < train_end && t < steps; ++t) {
                if (mask.at(i, t, k) != 0.0) {
                    sum += values.at(i, t, k);
                    ++count;
                }
            }
        }
        if (count == 0) {
            continue;
        }
        const double mean = sum / static_cast<double>(count);
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t t = 0; t < train_end && t < steps; ++t) {
                if (mask.at(i, t, k) != 0.0) {
                    const double d = values.at(i, t, k) - mean;
                    ss += d * d;
                }
            }
        }
        const double sd = std::sqrt(ss / static_cast<double>(count));
        s.mean[k] = mean;
        s.std[k] = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

void apply_stats(Tensor& values, const Tensor& mask, const NormStats& s) {
    const std::size_t f = values.channels();
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = mask[i] != 0.0 ? s.forward(i % f, values[i]) : 0.0;
    }
}

}  // namespace

StDataset standardize(const StDataset& data) {
    if (data.standardized) {
        throw std::invalid_argument("standardize: dataset is already standardized");
    }
    if (data.split.train_end == 0) {
        throw std::invalid_argument("standardize: empty train segment");
    }
    StDataset out = data;
    out.y_stats = feature_stats(data.y, data.mask, data.split.train_end);
    out.x_stats = feature_stats(data.x, data.x_mask, data.split.train_end);
    apply_stats(out.y, out.mask, out.y_stats);
    apply_stats(out.x, out.x_mask, out.x_stats);
    out.standardized = true;
    return out;
}

Tensor destandardize_y(const StDataset& data, const Tensor& values) {
    if (!data.standardized) {
        return values;
    }
    Tensor out = values;
    const std::size_t f = data.d_y();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = data.y_stats.inverse(i % f, out[i]);
    }
    return out;
}

Tensor destandardize_y_std(const StDataset& data, const Tensor& stds) {
    if (!data.standardized) {
        return stds;
    }
    Tensor out = stds;
    const std::size_t f = data.d_y();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= data.y_stats.std[i % f];
    }
    return out;
}

// ---- windows ---------------------------------------------------------------------

std::vector<std::size_t> iter_windows(const StDataset& data, Segment segment, std::size_t T, std::size_t stride) {
    if (T < 1 || stride < 1) {
        throw std::invalid_argument("iter_windows: T and stride must be >= 1");
    }
    const std::size_t begin = data.split.begin(segment);
    const std::size_t end = data.split.end(segment);
    if (end - begin < T) {
        throw std::invalid_argument("iter_windows: " + to_string(segment) + " segment has " +
                                    std::to_string(end - begin) + " steps, shorter than T=" + std::to_string(T));
    }
    std::vector<std::size_t> starts;
    for (std::size_t s = begin; s + T <= end; s += stride) {
        starts.push_back(s);
    }
    return starts;
}

namespace {

Tensor gather(const Tensor& src, std::span<const std::size_t> nodes, std::size_t start, std::size_t T) {
    const std::size_t steps = src.dim(1), f = src.dim(2);
    Tensor out(Shape{nodes.size(), T, f});
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const double* from = src.ptr() + (nodes[i] * steps + start) * f;
        std::copy_n(from, T * f, out.ptr() + i * T * f);
    }
    return out;
}

}  // namespace

WindowBatch slice_window(const StDataset& data, std::size_t start, std::size_t T,
                         std::span<const std::size_t> context_ids, std::span<const std::size_t> target_ids,
                         std::vector<Tensor> khop) {
    if (start + T > data.steps()) {
        throw std::invalid_argument("slice_window: window [" + std::to_string(start) + ", " +
                                    std::to_string(start + T) + ") exceeds " + std::to_string(data.steps()) +
                                    " steps");
    }
    for (const auto ids : {context_ids, target_ids}) {
        for (std::size_t i : ids) {
            if (i >= data.nodes()) {
                throw std::invalid_argument("slice_window: node index out of range");
            }
        }
    }
    WindowBatch b;
    b.start = start;
    b.inputs.y_context = gather(data.y, context_ids, start, T);
    b.inputs.x_context = gather(data.x, context_ids, start, T);
    b.inputs.x_target = gather(data.x, target_ids, start, T);
    b.inputs.khop = std::move(khop);
    b.context_mask = gather(data.mask, context_ids, start, T);
    b.target.y = gather(data.y, target_ids, start, T);
    b.target.mask = gather(data.mask, target_ids, start, T);
    return b;
}

}  // namespace stgnp
