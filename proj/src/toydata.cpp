// Copyright 2026 The EyeDoc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "eyedoc/toydata.hpp"

#include <random>

#include "eyedoc/init.hpp"

namespace eyedoc::toydata {

namespace {

struct Disease {
  const char* name;
  const char* overview;
  const char* symptoms;
  const char* treatment;
  const char* medication;
  const char* prevention;
  const char* complaint[2];  // how a patient describes it
};

const std::vector<Disease>& table() {
  static const std::vector<Disease> t{
      {"麦粒肿", "眼睑腺体的急性化脓性炎症", "眼睑局部红肿疼痛，可触及硬结", "早期热敷，成脓后切开排脓",
       "左氧氟沙星滴眼液", "注意眼部卫生，不要用脏手揉眼",
       {"眼皮上长了个红肿的小包，一碰就疼", "上眼睑鼓起一个硬块，又红又痛"}},
      {"霰粒肿", "睑板腺出口阻塞形成的慢性肉芽肿", "眼睑内无痛性硬结，皮肤不红", "小的可热敷观察，大的手术刮除",
       "妥布霉素地塞米松眼膏", "规律作息，清洁睑缘",
       {"眼皮里摸到一个不痛的小硬结", "眼睑有个圆圆的疙瘩，不红也不疼"}},
      {"结膜炎", "结膜受感染或过敏引起的炎症", "眼红，分泌物增多，有异物感", "清洁分泌物，按病因用药",
       "妥布霉素滴眼液", "勤洗手，毛巾单独使用",
       {"眼睛发红，分泌物很多，早上睁不开", "两只眼都红了，总有黄色眼屎"}},
      {"干眼症", "泪液分泌不足或蒸发过快导致的眼表疾病", "眼干，酸涩，异物感，视疲劳", "人工泪液，减少用眼，热敷",
       "玻璃酸钠滴眼液", "少看屏幕，多眨眼",
       {"眼睛干涩发酸，看电脑久了更难受", "眼睛老是干，有异物感"}},
      {"白内障", "晶状体混浊导致的视力下降", "视物模糊，眩光，视力逐渐下降", "影响生活时行白内障手术",
       "早期可用吡诺克辛钠滴眼液", "户外戴太阳镜，控制血糖",
       {"看东西越来越模糊，像隔了一层雾", "视力慢慢下降，晚上看灯有光晕"}},
      {"青光眼", "眼压升高损害视神经的疾病", "眼胀，头痛，虹视，视野缩小", "降眼压药物，必要时激光或手术",
       "噻吗洛尔滴眼液", "定期测眼压，避免长时间暗处用眼",
       {"眼睛胀痛还头痛，看灯周围有彩虹圈", "眼眶发胀，视野变窄"}},
      {"近视", "远处物体成像在视网膜前", "看远模糊，看近清楚", "验光配镜，控制近距离用眼",
       "低浓度阿托品滴眼液", "多做户外活动，每天两小时",
       {"看远处的字看不清，看近处还行", "上课看黑板模糊，要眯着眼"}},
      {"角膜炎", "角膜受感染或损伤后的炎症", "眼痛，畏光，流泪，视力下降", "尽快抗感染治疗，停戴隐形眼镜",
       "左氧氟沙星眼用凝胶", "规范佩戴隐形眼镜",
       {"眼睛刺痛怕光，一直流泪", "戴隐形眼镜后眼睛很痛，睁不开"}},
      {"睑缘炎", "睑缘表面和睫毛毛囊的慢性炎症", "睑缘红痒，鳞屑，睫毛脱落", "清洁睑缘，热敷按摩",
       "红霉素眼膏", "每天清洁睑缘，少化眼妆",
       {"睫毛根部发红发痒，有很多皮屑", "眼皮边缘总是红痒，还掉睫毛"}},
      {"视网膜脱离", "视网膜神经层与色素上皮分离", "闪光感，黑影飘动，幕样遮挡", "尽早手术复位",
       "以手术为主，无特效药物", "高度近视者避免剧烈运动",
       {"眼前突然出现很多黑影和闪光", "视野里像有一块幕布挡住了"}},
      {"老花眼", "年龄增长导致调节能力下降", "看近模糊，需要把东西拿远", "验配老花镜",
       "不需要药物治疗", "注意用眼照明，适当休息",
       {"看手机要拿得很远才看得清", "近处的小字看不清，看远处没问题"}},
      {"翼状胬肉", "结膜组织增生侵入角膜", "眼白上有三角形增生组织", "小的观察，侵入角膜时手术切除",
       "人工泪液缓解刺激", "户外戴防紫外线眼镜",
       {"眼白上长了一块肉，往黑眼珠方向长", "内眼角有三角形的膜慢慢变大"}},
  };
  return t;
}

const std::vector<std::string> kDurations{"两天", "三天", "一周", "半个月", "一个月", "好几个月"};
const std::vector<std::string> kOpenings{"医生您好，", "大夫，", "你好，", ""};
const std::vector<std::string> kQuestions{"这是怎么回事？", "需要治疗吗？", "严重吗？", "该怎么办？"};
const std::vector<std::string> kFollowDays{"三", "五", "七", "十四"};
const std::vector<std::string> kClosings{"有变化随时来医院。", "注意休息，别揉眼睛。", "饮食清淡一些。",
                                         "保持眼部清洁。"};
const std::vector<std::string> kFollowQuestions{"需要用什么药？", "平时要注意什么？", "多久能好？"};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

std::string number(std::size_t n) { return std::to_string(n); }

kb::DiseaseDoc to_doc(const Disease& d, std::int64_t id) {
  kb::DiseaseDoc doc;
  doc.id = id;
  doc.name = d.name;
  doc.overview = d.overview;
  doc.symptoms = d.symptoms;
  doc.treatment = d.treatment;
  doc.medication = d.medication;
  doc.prevention = d.prevention;
  return doc;
}

// Clinic-style follow-up interval and closing depend only on what the
// patient said (duration and question), so they are learnable from the prompt.
const char* clinic_days(std::size_t duration) {
  static const char* days[] = {"三", "三", "五", "七", "十四", "十四"};
  return days[duration];
}

const char* clinic_closing(std::size_t question) {
  static const char* closings[] = {"有变化随时来医院。", "按时用药，注意休息。", "不用太担心，注意休息。",
                                   "别揉眼睛，饮食清淡一些。"};
  return closings[question];
}

std::string follow_answer(const Disease& d, std::size_t kind, Style style, std::size_t duration, Rng& rng) {
  switch (kind) {
    case 0:
      return style == Style::kClinic ? std::string("可以用") + d.medication + "，按说明使用。"
                                     : std::string(d.medication) + "。";
    case 1:
      return std::string(d.prevention) + "。";
    default:
      if (style == Style::kClinic) return std::string("一般") + clinic_days(duration) + "天左右会好转。";
      return "大概" + pick(kFollowDays, rng) + "天，" + pick(kClosings, rng);
  }
}

}  // namespace

std::vector<kb::DiseaseDoc> core_diseases() {
  std::vector<kb::DiseaseDoc> out;
  for (std::size_t i = 0; i < table().size(); ++i) out.push_back(to_doc(table()[i], static_cast<std::int64_t>(i)));
  return out;
}

std::vector<kb::DiseaseDoc> knowledge_base(std::size_t n, std::uint64_t seed) {
  std::vector<kb::DiseaseDoc> out = core_diseases();
  if (n <= out.size()) {
    out.resize(n);
    return out;
  }
  Rng rng(seed);
  const auto& t = table();
  for (std::size_t i = out.size(); i < n; ++i) {
    const Disease& base = t[i % t.size()];
    kb::DiseaseDoc doc = to_doc(base, static_cast<std::int64_t>(i));
    doc.name = std::string(base.name) + "（" + number(i) + "型）";
    doc.overview = pick(t, rng).overview;
    doc.treatment = pick(t, rng).treatment;
    doc.medication = pick(t, rng).medication;
    doc.complications = std::string("可合并") + pick(t, rng).name;
    doc.examination = "裂隙灯检查" + number(i % 7) + "项";
    out.push_back(doc);
  }
  return out;
}

std::vector<LabeledDialogue> dialogues(const DialogueSpec& spec) {
  Rng rng(spec.seed);
  std::vector<LabeledDialogue> out;
  const auto& t = table();
  for (std::size_t n = 0; n < spec.count; ++n) {
    const std::size_t which = std::uniform_int_distribution<std::size_t>(0, t.size() - 1)(rng);
    const Disease& d = t[which];
    const std::size_t age = std::uniform_int_distribution<std::size_t>(6, 80)(rng);
    const std::size_t duration = std::uniform_int_distribution<std::size_t>(0, kDurations.size() - 1)(rng);
    const std::size_t question = std::uniform_int_distribution<std::size_t>(0, kQuestions.size() - 1)(rng);
    std::vector<std::string> turns;
    turns.push_back(pick(kOpenings, rng) + "我" + number(age) + "岁，" + d.complaint[rng() % 2] + "，已经" +
                    kDurations[duration] + "了，" + kQuestions[question]);
    if (spec.style == Style::kClinic)
      turns.push_back(std::string("根据您的描述，考虑是") + d.name + "。" + d.treatment + "，建议" +
                      clinic_days(duration) + "天后复查，" + clinic_closing(question));
    else
      turns.push_back(std::string("可能是") + d.name + "，" + d.symptoms + "。" + d.treatment + "。" +
                      pick(kClosings, rng));
    for (std::size_t r = 1; r < std::max<std::size_t>(1, spec.rounds); ++r) {
      const std::size_t kind = (r - 1 + rng() % 3) % kFollowQuestions.size();
      turns.push_back(kFollowQuestions[kind]);
      turns.push_back(follow_answer(d, kind, spec.style, duration, rng));
    }
    out.push_back({Dialogue::alternating(spec.id_prefix + "-" + number(n), turns), which});
  }
  return out;
}

std::vector<std::string> mlm_corpus(std::size_t lines, std::uint64_t seed) {
  std::vector<std::string> out;
  std::vector<std::string> fields;
  for (const auto& doc : core_diseases())
    for (std::size_t i = 0; i < 10; ++i)
      if (!kb::field(doc, i).empty()) fields.push_back(kb::field(doc, i));
  DialogueSpec spec;
  spec.count = lines;
  spec.rounds = 2;
  spec.seed = seed;
  const auto ds = dialogues(spec);
  std::size_t next_field = 0, next_dialogue = 0, next_turn = 0;
  while (out.size() < lines) {
    if (out.size() % 4 == 3) {
      out.push_back(fields[next_field++ % fields.size()]);
      continue;
    }
    const auto& turns = ds[next_dialogue % ds.size()].dialogue.turns;
    out.push_back(turns[next_turn].text);
    if (++next_turn == turns.size()) {
      next_turn = 0;
      ++next_dialogue;
    }
  }
  return out;
}

std::vector<std::string> vocabulary_lines() {
  std::vector<std::string> out{"0123456789", "（）型可合并裂隙灯检查项", "patient: doctor:"};
  for (const char* label : kb::field_labels()) out.push_back(label);
  for (const auto& d : table()) {
    for (const char* s : {d.name, d.overview, d.symptoms, d.treatment, d.medication, d.prevention,
                          d.complaint[0], d.complaint[1]})
      out.push_back(s);
  }
  for (const auto* v : {&kDurations, &kOpenings, &kQuestions, &kFollowDays, &kClosings, &kFollowQuestions})
    out.insert(out.end(), v->begin(), v->end());
  out.push_back("我岁，已经了，根据您的描述，考虑是可能是。建议天后复查，可以用按说明使用。一般大概天左右会好转，按时用药不用太担心");
  return out;
}

}  // namespace eyedoc::toydata
