#include <bit>
#include <cctype>
#include <cmath>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "fairtrain/data.hpp"

namespace fairtrain {

namespace {

constexpr char kMagic[8] = {'F', 'T', 'D', 'A', 'T', 'A', '0', '1'};

void write_text(const Dataset& dataset, std::ostream& os) {
    os << dataset.size() << ' ' << dataset.dim() << ' ' << dataset.label_count << ' '
       << dataset.group_count << '\n';
    char buf[32];
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        os << dataset.labels[i] << ' ' << dataset.groups[i];
        for (double v : dataset.features.row(i)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            os << ' ' << buf;
        }
        os << '\n';
    }
}

void write_binary(const Dataset& dataset, std::ostream& os) {
    os.write(kMagic, sizeof kMagic);
    binio::write_u64(os, dataset.size());
    binio::write_u64(os, dataset.dim());
    binio::write_u64(os, static_cast<std::uint64_t>(dataset.label_count));
    binio::write_u64(os, static_cast<std::uint64_t>(dataset.group_count));
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        binio::write_u64(os, static_cast<std::uint64_t>(static_cast<std::int64_t>(dataset.labels[i])));
        binio::write_u64(os, static_cast<std::uint64_t>(static_cast<std::int64_t>(dataset.groups[i])));
        for (double v : dataset.features.row(i)) binio::write_f64(os, v);
    }
}

// Splits on ASCII whitespace; returns the tokens of one line.
std::vector<std::string_view> tokenize(std::string_view line) {
    std::vector<std::string_view> tokens;
    std::size_t pos = 0;
    while (pos < line.size()) {
        while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
        const std::size_t start = pos;
        while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
        if (pos > start) tokens.push_back(line.substr(start, pos - start));
    }
    return tokens;
}

template <typename T>
T parse_number(std::string_view token, const std::string& source, std::size_t line,
               const char* what) {
    T value{};
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size()) {
        throw ParseError(source + ":" + std::to_string(line) + ": invalid " + what + " '" +
                             std::string(token) + "'",
                         line);
    }
    return value;
}

Dataset read_text(std::istream& is, const std::string& source) {
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) -> ParseError {
        return ParseError(source + ":" + std::to_string(line_no) + ": " + msg, line_no);
    };

    if (!std::getline(is, line)) {
        line_no = 1;
        throw fail("empty file, expected header `n d |Y| |G|`");
    }
    line_no = 1;
    const auto header = tokenize(line);
    if (header.size() != 4) throw fail("header must have 4 fields `n d |Y| |G|`");
    const auto n = parse_number<std::size_t>(header[0], source, line_no, "n");
    const auto d = parse_number<std::size_t>(header[1], source, line_no, "d");
    Dataset dataset;
    dataset.label_count = parse_number<int>(header[2], source, line_no, "|Y|");
    dataset.group_count = parse_number<int>(header[3], source, line_no, "|G|");
    if (n == 0) throw fail("n must be positive");
    if (dataset.label_count < 2 || dataset.group_count < 2) {
        throw fail("|Y| and |G| must be at least 2");
    }

    dataset.features = Matrix(n, d);
    dataset.labels.resize(n);
    dataset.groups.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(is, line)) {
            line_no = i + 2;
            throw fail("expected " + std::to_string(n) + " rows, found " + std::to_string(i));
        }
        line_no = i + 2;
        const auto tokens = tokenize(line);
        if (tokens.size() != d + 2) {
            throw fail("row has " + std::to_string(tokens.size()) + " fields, expected " +
                       std::to_string(d + 2));
        }
        const int y = parse_number<int>(tokens[0], source, line_no, "label");
        const int g = parse_number<int>(tokens[1], source, line_no, "group");
        if (y < 0 || y >= dataset.label_count) {
            throw fail("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(dataset.label_count) + ")");
        }
        if (g < 0 || g >= dataset.group_count) {
            throw fail("group " + std::to_string(g) + " outside [0, " +
                       std::to_string(dataset.group_count) + ")");
        }
        dataset.labels[i] = y;
        dataset.groups[i] = g;
        auto row = dataset.features.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            row[j] = parse_number<double>(tokens[j + 2], source, line_no, "feature");
            if (!std::isfinite(row[j])) throw fail("non-finite feature value");
        }
    }
    while (std::getline(is, line)) {
        ++line_no;
        if (!tokenize(line).empty()) throw fail("unexpected content after last row");
    }
    return dataset;
}

Dataset read_binary(std::istream& is, const std::string& source) {
    binio::Reader reader(is, source);
    reader.expect_magic(kMagic);
    const auto n = reader.u64("n");
    const auto d = reader.u64("d");
    const auto labels = reader.u64("|Y|");
    const auto groups = reader.u64("|G|");
    if (n == 0) reader.fail("n must be positive");
    if (labels < 2 || groups < 2 || labels > (1u << 30) || groups > (1u << 30)) {
        reader.fail("|Y| and |G| must be in [2, 2^30]");
    }
    {
        const auto here = is.tellg();
        is.seekg(0, std::ios::end);
        const auto remaining = static_cast<std::uint64_t>(is.tellg() - here);
        is.seekg(here);
        if (d > remaining / 8 || n != remaining / (16 + 8 * d) ||
            remaining % (16 + 8 * d) != 0) {
            reader.fail("payload size does not match header n=" + std::to_string(n) +
                        " d=" + std::to_string(d));
        }
    }
    Dataset dataset;
    dataset.label_count = static_cast<int>(labels);
    dataset.group_count = static_cast<int>(groups);
    dataset.features = Matrix(n, d);
    dataset.labels.resize(n);
    dataset.groups.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = static_cast<std::int64_t>(reader.u64("label"));
        if (y < 0 || y >= dataset.label_count) reader.fail("label out of range");
        const auto g = static_cast<std::int64_t>(reader.u64("group"));
        if (g < 0 || g >= dataset.group_count) reader.fail("group out of range");
        dataset.labels[i] = static_cast<int>(y);
        dataset.groups[i] = static_cast<int>(g);
        for (double& v : dataset.features.row(i)) {
            v = reader.f64("feature");
            if (!std::isfinite(v)) reader.fail("non-finite feature value");
        }
    }
    reader.expect_end();
    return dataset;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path,
                  DatasetFormat format) {
    dataset.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    if (format == DatasetFormat::binary) {
        write_binary(dataset, os);
    } else {
        write_text(dataset, os);
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    char head[sizeof kMagic] = {};
    is.read(head, sizeof head);
    const bool binary = is.gcount() == sizeof head && std::memcmp(head, kMagic, sizeof head) == 0;
    is.clear();
    is.seekg(0);
    return binary ? read_binary(is, path.string()) : read_text(is, path.string());
}

}  // namespace fairtrain
