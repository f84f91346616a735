#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace hcl {

struct PlotSeries {
	std::string name;
	std::vector<double> x;
	std::vector<double> y;
	std::vector<double> err; ///< half-width of the error bar, may be empty
};

namespace detail {

inline std::string svg_num(double v)
{
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.2f", v);
	return buf;
}

inline std::string tick_label(double v)
{
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.4g", v);
	return buf;
}

inline std::string xml_escape(const std::string& s)
{
	std::string out;
	for (char c : s) {
		switch (c) {
		case '<': out += "&lt;"; break;
		case '>': out += "&gt;"; break;
		case '&': out += "&amp;"; break;
		case '"': out += "&quot;"; break;
		default: out += c;
		}
	}
	return out;
}

} // namespace detail

/// Standalone SVG line chart with error bars.
inline std::string render_line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
				    const std::vector<PlotSeries>& series)
{
	constexpr double W = 640, H = 420, L = 70, R = 160, T = 40, B = 50;
	double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
	double ymin = xmin, ymax = -xmin;
	for (const auto& s : series)
		for (std::size_t i = 0; i < s.x.size(); ++i) {
			if (!std::isfinite(s.y[i]))
				continue;
			const double e = i < s.err.size() && std::isfinite(s.err[i]) ? s.err[i] : 0.0;
			xmin = std::min(xmin, s.x[i]);
			xmax = std::max(xmax, s.x[i]);
			ymin = std::min(ymin, s.y[i] - e);
			ymax = std::max(ymax, s.y[i] + e);
		}
	if (!std::isfinite(xmin)) {
		xmin = 0;
		xmax = 1;
		ymin = 0;
		ymax = 1;
	}
	if (xmax == xmin) {
		xmin -= 0.5;
		xmax += 0.5;
	}
	if (ymax == ymin) {
		ymin -= 0.5;
		ymax += 0.5;
	}
	const double pad = 0.05 * (ymax - ymin);
	ymin -= pad;
	ymax += pad;
	auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
	auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
	static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

	using detail::svg_num;
	std::ostringstream os;
	os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
	   << W << ' ' << H << "\">\n";
	os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
	os << "<text x=\"" << svg_num(W / 2) << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
	   << "font-size=\"15\">" << detail::xml_escape(title) << "</text>\n";
	os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
	   << "\" stroke=\"black\"/>\n";
	os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
	   << "\" stroke=\"black\"/>\n";
	for (int k = 0; k <= 4; ++k) {
		const double xv = xmin + (xmax - xmin) * k / 4.0;
		const double yv = ymin + (ymax - ymin) * k / 4.0;
		os << "<text x=\"" << svg_num(px(xv)) << "\" y=\"" << H - B + 18
		   << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
		   << detail::tick_label(xv) << "</text>\n";
		os << "<text x=\"" << L - 6 << "\" y=\"" << svg_num(py(yv) + 4)
		   << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << detail::tick_label(yv)
		   << "</text>\n";
		os << "<line x1=\"" << L << "\" y1=\"" << svg_num(py(yv)) << "\" x2=\"" << W - R << "\" y2=\""
		   << svg_num(py(yv)) << "\" stroke=\"#e5e5e5\"/>\n";
	}
	os << "<text x=\"" << svg_num((L + W - R) / 2) << "\" y=\"" << H - 12
	   << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << detail::xml_escape(xlabel)
	   << "</text>\n";
	os << "<text x=\"16\" y=\"" << svg_num((T + H - B) / 2) << "\" transform=\"rotate(-90 16 "
	   << svg_num((T + H - B) / 2) << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
	   << detail::xml_escape(ylabel) << "</text>\n";

	for (std::size_t si = 0; si < series.size(); ++si) {
		const auto& s = series[si];
		const char* col = palette[si % (sizeof palette / sizeof *palette)];
		std::string pts;
		for (std::size_t i = 0; i < s.x.size(); ++i) {
			if (!std::isfinite(s.y[i]))
				continue;
			pts += svg_num(px(s.x[i])) + "," + svg_num(py(s.y[i])) + " ";
			if (i < s.err.size() && std::isfinite(s.err[i]) && s.err[i] > 0) {
				const double x = px(s.x[i]);
				os << "<line x1=\"" << svg_num(x) << "\" y1=\"" << svg_num(py(s.y[i] - s.err[i]))
				   << "\" x2=\"" << svg_num(x) << "\" y2=\"" << svg_num(py(s.y[i] + s.err[i]))
				   << "\" stroke=\"" << col << "\"/>\n";
			}
			os << "<circle cx=\"" << svg_num(px(s.x[i])) << "\" cy=\"" << svg_num(py(s.y[i]))
			   << "\" r=\"3\" fill=\"" << col << "\"/>\n";
		}
		os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"" << pts
		   << "\"/>\n";
		const double ly = T + 10 + 18.0 * static_cast<double>(si);
		os << "<line x1=\"" << W - R + 12 << "\" y1=\"" << svg_num(ly) << "\" x2=\"" << W - R + 32 << "\" y2=\""
		   << svg_num(ly) << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
		os << "<text x=\"" << W - R + 38 << "\" y=\"" << svg_num(ly + 4)
		   << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::xml_escape(s.name) << "</text>\n";
	}
	os << "</svg>\n";
	return os.str();
}

} // namespace hcl
