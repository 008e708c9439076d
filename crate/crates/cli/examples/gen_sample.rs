//! Regenerates the synthetic post files under `data/sample/posts/`.
//!
//! Every post is invented. Campaign shape only: a burst after the death date,
//! decaying attention over about three months, and a share of noise posts
//! that the filter rules should catch.
//!
//! ```text
//! cargo run -p stele-cli --example gen_sample -- data/sample
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const POSTS_PER_AUTHOR: usize = 200;
const CAMPAIGN_DAYS: i64 = 90;

struct Campaign {
    id: &'static str,
    death: (i32, u32, u32),
    /// Relative engagement scale.
    reach: f64,
    terms: &'static [&'static str],
    titles: &'static [&'static str],
}

const CAMPAIGNS: [Campaign; 7] = [
    Campaign {
        id: "qiong_yao",
        death: (2024, 12, 4),
        reach: 40.0,
        terms: &["爱情", "青春", "童年", "琼瑶剧", "深情", "眼泪"],
        titles: &["还珠格格", "烟雨濛濛", "一帘幽梦", "庭院深深", "在水一方", "窗外"],
    },
    Campaign {
        id: "qi_bangyuan",
        death: (2024, 3, 28),
        reach: 6.0,
        terms: &["乡愁", "台湾", "东北", "教育", "历史", "先生"],
        titles: &["巨流河", "一生中的一天", "千年之泪"],
    },
    Campaign {
        id: "yang_yi",
        death: (2023, 1, 27),
        reach: 3.0,
        terms: &["翻译", "百岁", "西南联大", "先生", "书信", "记忆"],
        titles: &["呼啸山庄", "青青者忆", "天真与经验之歌"],
    },
    Campaign {
        id: "hu_xudong",
        death: (2021, 8, 22),
        reach: 1.5,
        terms: &["诗人", "巴西", "北大", "课堂", "幽默", "诗歌"],
        titles: &["日历之力", "风之乳", "去他的巴西", "一个人的排行榜"],
    },
    Campaign {
        id: "jin_yong",
        death: (2018, 10, 30),
        reach: 60.0,
        terms: &["江湖", "武侠", "大侠", "侠之大者", "少年", "金庸"],
        titles: &["射雕英雄传", "天龙八部", "笑傲江湖", "鹿鼎记", "神雕侠侣", "倚天屠龙记"],
    },
    Campaign {
        id: "huang_yi",
        death: (2017, 4, 5),
        reach: 1.8,
        terms: &["玄幻", "武侠", "穿越", "青春", "小说", "少年"],
        titles: &["寻秦记", "大唐双龙传", "覆雨翻云", "边荒传说", "破碎虚空"],
    },
    Campaign {
        id: "yang_jiang",
        death: (2016, 5, 25),
        reach: 10.0,
        terms: &["钱锺书", "先生", "团聚", "优雅", "百岁", "读书"],
        titles: &["我们仨", "干校六记", "走到人生边上", "洗澡", "将饮茶"],
    },
];

const MOURNING: [&str; 8] = ["一路走好", "怀念", "致敬", "永远", "再见", "天堂", "回忆", "感谢"];

const ENGLISH: [&str; 4] = [
    "rest in peace, thank you for the stories",
    "a whole generation grew up reading you",
    "farewell and thank you",
    "your books will outlive us all",
];

const NOISE: [&str; 5] = ["。", "http://t.cn/A6x", "🕯🕯🕯", "代购正品，加微信", "转发"];

fn main() {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "data/sample".into());
    let dir = root.join("posts");
    std::fs::create_dir_all(&dir).expect("create posts directory");
    for (n, campaign) in CAMPAIGNS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2016 + n as u64);
        let (y, m, d) = campaign.death;
        let start = Utc.from_utc_datetime(&NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(8, 0, 0).unwrap());
        let mut body = String::new();
        for i in 0..POSTS_PER_AUTHOR {
            // Most posts land in the first days; the tail thins out.
            let day = (CAMPAIGN_DAYS as f64 * rng.random::<f64>().powi(3)) as i64;
            let created_at = start + Duration::days(day) + Duration::seconds(rng.random_range(0..86_400));
            let text = post_text(campaign, &mut rng);
            let fade = 0.5f64.powf(day as f64 / 14.0);
            let mut count = |scale: f64| -> u64 {
                let heavy = (-rng.random::<f64>().ln()).powi(2);
                (campaign.reach * scale * heavy * (0.2 + fade)).round() as u64
            };
            let reposts = count(30.0);
            let comments = count(12.0);
            let likes = count(120.0);
            let record = json!({
                "id": format!("{}-{:04}", campaign.id, i + 1),
                "author_tag": campaign.id,
                "text": text,
                "created_at": created_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                "reposts": reposts,
                "comments": comments,
                "likes": likes,
                "is_original": rng.random_bool(0.7),
            });
            writeln!(body, "{record}").unwrap();
        }
        let path = dir.join(format!("{}.jsonl", campaign.id));
        std::fs::write(&path, body).expect("write posts");
        println!("{}", path.display());
    }
}

fn post_text(c: &Campaign, rng: &mut ChaCha8Rng) -> String {
    let roll: f64 = rng.random();
    if roll < 0.08 {
        return NOISE.choose(rng).unwrap().to_string();
    }
    if roll < 0.14 {
        return ENGLISH.choose(rng).unwrap().to_string();
    }
    let mourning = MOURNING.choose(rng).unwrap();
    let term = c.terms.choose(rng).unwrap();
    let title = c.titles.choose(rng).unwrap();
    match rng.random_range(0..4) {
        0 => format!("{mourning}，{term}。读过《{title}》的人都不会忘记。"),
        1 => format!("《{title}》陪我长大，{term}，{mourning}。"),
        2 => format!("{term}。{mourning}！"),
        _ => {
            let other = c.terms.choose(rng).unwrap();
            format!("{mourning}。{term}与{other}，还有《{title}》。")
        }
    }
}
