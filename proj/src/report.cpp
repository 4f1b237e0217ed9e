#include <cmath>
#include <iomanip>
#include <sstream>

#include "medvqa/trainer.hpp"

namespace medvqa::trainer {

namespace {

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string percent(const std::optional<double>& v) { return v ? fixed(*v * 100.0, 2) : "-"; }

// RFC 4180 quoting for free-text columns.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string curves_csv(std::span<const CurveRow> curves) {
  std::ostringstream os;
  os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& c : curves) {
    os << c.epoch << ',' << fixed(c.train_loss, 6) << ',' << fixed(c.train_acc, 6) << ','
       << fixed(c.val_loss, 6) << ',' << fixed(c.val_acc, 6) << '\n';
  }
  return os.str();
}

ReportTable compile_report(std::span<const EvalReport> runs) {
  ReportTable t;
  for (const auto& run : runs) {
    for (const auto& row : run.rows) t.rows.push_back(row);
  }
  std::optional<double> top;
  for (const auto& r : t.rows) {
    if (r.test_accuracy && (!top || *r.test_accuracy > *top)) top = r.test_accuracy;
  }
  for (const auto& r : t.rows) t.best.push_back(top && r.test_accuracy && *r.test_accuracy == *top);

  std::ostringstream csv;
  csv << "image_encoder,text_encoder,val_accuracy,test_accuracy,best\n";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    csv << csv_field(r.image_encoder) << ',' << csv_field(r.text_encoder) << ','
        << (r.val_accuracy ? fixed(*r.val_accuracy, 6) : "") << ','
        << (r.test_accuracy ? fixed(*r.test_accuracy, 6) : "") << ',' << (t.best[i] ? 1 : 0) << '\n';
  }
  t.csv = csv.str();

  std::ostringstream txt;
  txt << std::left << std::setw(24) << "image encoder" << std::setw(28) << "text encoder" << std::right
      << std::setw(10) << "val %" << std::setw(10) << "test %" << '\n';
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    txt << std::left << std::setw(24) << r.image_encoder << std::setw(28) << r.text_encoder << std::right
        << std::setw(10) << percent(r.val_accuracy) << std::setw(10) << percent(r.test_accuracy)
        << (t.best[i] ? "  *" : "") << '\n';
  }
  t.text = txt.str();
  return t;
}

}  // namespace medvqa::trainer
