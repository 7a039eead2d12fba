//! Generator of a small university campus in the shape of LUBM data, and
//! the five LUBM query shapes over it.

use rand::Rng;

use super::Triple;

pub const UB: &str = "http://www.lehigh.edu/~zhp2/2004/0401/univ-bench.owl#";
pub const RDF_TYPE: &str = "<http://www.w3.org/1999/02/22-rdf-syntax-ns#type>";

fn ub(local: &str) -> String {
    format!("<{UB}{local}>")
}

fn lit(s: &str) -> String {
    format!("\"{s}\"")
}

#[derive(Debug, Clone, Copy)]
pub struct Campus {
    pub universities: u32,
    pub departments: u32,
    pub full_professors: u32,
    pub associate_professors: u32,
    pub courses: u32,
    pub graduate_courses: u32,
    pub undergraduates: u32,
    pub graduates: u32,
    pub research_groups: u32,
}

impl Campus {
    /// About 100k triples.
    pub fn standard() -> Campus {
        Campus {
            universities: 4,
            departments: 20,
            full_professors: 8,
            associate_professors: 10,
            courses: 20,
            graduate_courses: 10,
            undergraduates: 100,
            graduates: 30,
            research_groups: 5,
        }
    }

    pub fn tiny() -> Campus {
        Campus {
            universities: 2,
            departments: 3,
            full_professors: 3,
            associate_professors: 2,
            courses: 5,
            graduate_courses: 3,
            undergraduates: 15,
            graduates: 6,
            research_groups: 2,
        }
    }
}

pub fn university(u: u32) -> String {
    format!("<http://www.University{u}.edu>")
}

pub fn department(u: u32, d: u32) -> String {
    format!("<http://www.Department{d}.University{u}.edu>")
}

fn member(u: u32, d: u32, kind: &str, i: u32) -> String {
    format!("<http://www.Department{d}.University{u}.edu/{kind}{i}>")
}

pub fn generate(rng: &mut impl Rng, c: Campus) -> Vec<Triple> {
    let ty = RDF_TYPE.to_string();
    let mut out: Vec<Triple> = Vec::new();
    let mut add = |s: &String, p: String, o: String| out.push([s.clone(), p, o]);
    for u in 0..c.universities {
        add(&university(u), ty.clone(), ub("University"));
        add(&university(u), ub("name"), lit(&format!("University{u}")));
    }
    for u in 0..c.universities {
        for d in 0..c.departments {
            let dept = department(u, d);
            add(&dept, ty.clone(), ub("Department"));
            add(&dept, ub("subOrganizationOf"), university(u));
            add(&dept, ub("name"), lit(&format!("Department{d}")));
            for g in 0..c.research_groups {
                let grp = member(u, d, "ResearchGroup", g);
                add(&grp, ty.clone(), ub("ResearchGroup"));
                add(&grp, ub("subOrganizationOf"), dept.clone());
            }
            let courses: Vec<String> = (0..c.courses).map(|i| member(u, d, "Course", i)).collect();
            let gcourses: Vec<String> = (0..c.graduate_courses).map(|i| member(u, d, "GraduateCourse", i)).collect();
            for x in &courses {
                add(x, ty.clone(), ub("Course"));
            }
            for x in &gcourses {
                add(x, ty.clone(), ub("GraduateCourse"));
            }
            let mut profs = Vec::new();
            for (kind, n) in [("FullProfessor", c.full_professors), ("AssociateProfessor", c.associate_professors)] {
                for i in 0..n {
                    let p = member(u, d, kind, i);
                    add(&p, ty.clone(), ub(kind));
                    add(&p, ub("worksFor"), dept.clone());
                    add(&p, ub("name"), lit(&format!("{kind}{i}")));
                    add(&p, ub("emailAddress"), lit(&format!("{kind}{i}@Department{d}.University{u}.edu")));
                    add(&p, ub("telephone"), lit(&format!("xxx-{u}{d}{i}")));
                    add(&p, ub("undergraduateDegreeFrom"), university(rng.random_range(0..c.universities)));
                    add(&p, ub("doctoralDegreeFrom"), university(rng.random_range(0..c.universities)));
                    for _ in 0..2 {
                        add(&p, ub("teacherOf"), courses[rng.random_range(0..courses.len())].clone());
                    }
                    add(&p, ub("teacherOf"), gcourses[rng.random_range(0..gcourses.len())].clone());
                    profs.push(p);
                }
            }
            for i in 0..c.undergraduates {
                let s = member(u, d, "UndergraduateStudent", i);
                add(&s, ty.clone(), ub("UndergraduateStudent"));
                add(&s, ub("memberOf"), dept.clone());
                add(&s, ub("name"), lit(&format!("UndergraduateStudent{i}")));
                add(&s, ub("emailAddress"), lit(&format!("UndergraduateStudent{i}@Department{d}.University{u}.edu")));
                for _ in 0..rng.random_range(2..=4) {
                    add(&s, ub("takesCourse"), courses[rng.random_range(0..courses.len())].clone());
                }
                if rng.random_bool(0.2) {
                    add(&s, ub("advisor"), profs[rng.random_range(0..profs.len())].clone());
                }
                if rng.random_bool(0.1) {
                    add(&s, ub("undergraduateDegreeFrom"), university(rng.random_range(0..c.universities)));
                }
            }
            for i in 0..c.graduates {
                let s = member(u, d, "GraduateStudent", i);
                add(&s, ty.clone(), ub("GraduateStudent"));
                add(&s, ub("memberOf"), dept.clone());
                add(&s, ub("name"), lit(&format!("GraduateStudent{i}")));
                add(&s, ub("undergraduateDegreeFrom"), university(rng.random_range(0..c.universities)));
                add(&s, ub("advisor"), profs[rng.random_range(0..profs.len())].clone());
                for _ in 0..rng.random_range(1..=3) {
                    add(&s, ub("takesCourse"), gcourses[rng.random_range(0..gcourses.len())].clone());
                }
                if rng.random_bool(0.3) {
                    add(&s, ub("takesCourse"), courses[rng.random_range(0..courses.len())].clone());
                }
            }
        }
    }
    out
}

const PREFIXES: &str = "PREFIX rdf: <http://www.w3.org/1999/02/22-rdf-syntax-ns#>\n\
PREFIX ub: <http://www.lehigh.edu/~zhp2/2004/0401/univ-bench.owl#>\n";

/// The five LUBM query shapes, as (name, text).
pub fn queries() -> Vec<(&'static str, String)> {
    let q = |body: &str| format!("{PREFIXES}{body}");
    vec![
        (
            "Q1",
            q("SELECT ?x WHERE {\n?x ub:subOrganizationOf <http://www.Department0.University0.edu> .\n?x rdf:type ub:ResearchGroup . }"),
        ),
        (
            "Q2",
            q("SELECT ?x WHERE {\n?x ub:worksFor <http://www.Department0.University0.edu> .\n?x rdf:type ub:FullProfessor . ?x ub:name ?y1 .\n?x ub:emailAddress ?y2 . ?x ub:telephone ?y3 . }"),
        ),
        (
            "Q3",
            q("SELECT ?x ?y ?z WHERE {\n?y rdf:type ub:University . ?z ub:subOrganizationOf ?y .\n?z rdf:type ub:Department . ?x ub:memberOf ?z .\n?x ub:undergraduateDegreeFrom ?y .\n?x rdf:type ub:UndergraduateStudent. }"),
        ),
        (
            "Q4",
            q("SELECT ?x ?y ?z WHERE {\n?y rdf:type ub:University . ?z ub:subOrganizationOf ?y .\n?z rdf:type ub:Department . ?x ub:memberOf ?z .\n?x rdf:type ub:GraduateStudent .\n?x ub:undergraduateDegreeFrom ?y . }"),
        ),
        (
            "Q5",
            q("SELECT ?x ?y ?z WHERE {\n?y rdf:type ub:FullProfessor . ?y ub:teacherOf ?z .\n?z rdf:type ub:Course . ?x ub:advisor ?y .\n?x ub:takesCourse ?z . }"),
        ),
    ]
}
