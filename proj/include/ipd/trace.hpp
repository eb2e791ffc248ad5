#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

namespace ipd {

/// Round-trip exact text form of a double ("%.17g").
inline std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Minimal CSV sink: fixed header, one row per call. Writes nothing when the
/// stream is null, so solvers can carry a writer unconditionally.
class CsvWriter
{
public:
    CsvWriter(std::ostream* out, std::vector<std::string> header) : out_(out), header_(std::move(header))
    {
        if (!out_) return;
        for (std::size_t i = 0; i < header_.size(); ++i) *out_ << (i ? "," : "") << header_[i];
        *out_ << '\n';
    }

    bool enabled() const noexcept { return out_ != nullptr; }
    const std::vector<std::string>& header() const noexcept { return header_; }

    template <typename... Cells>
    void row(const Cells&... cells)
    {
        if (!out_) return;
        static_assert(sizeof...(Cells) > 0);
        bool first = true;
        ((*out_ << (first ? "" : ",") << cell(cells), first = false), ...);
        *out_ << '\n';
    }

private:
    template <typename T>
    static std::string cell(const T& v)
    {
        if constexpr (std::is_floating_point_v<T>) {
            return format_double(static_cast<double>(v));
        } else if constexpr (std::is_integral_v<T>) {
            return std::to_string(v);
        } else {
            return std::string(v);
        }
    }

    std::ostream* out_;
    std::vector<std::string> header_;
};

} // namespace ipd
