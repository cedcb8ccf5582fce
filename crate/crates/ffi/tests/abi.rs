use std::ffi::{CStr, CString};
use std::ptr;

use sobolcpi_ffi::*;

fn linear(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let mut unif = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64) / (1u64 << 53) as f64 - 0.5
    };
    let mut x = Vec::with_capacity(n * 3);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a = unif();
        let b = 0.6 * a + unif();
        let c = unif();
        x.extend([a, b, c]);
        y.push(2.0 * a + 0.1 * unif());
    }
    (x, y)
}

fn last_error() -> String {
    let p = sobolcpi_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

unsafe fn dataset(n: usize, seed: u64) -> *mut SobolcpiDataset {
    let (x, y) = linear(n, seed);
    let mut ds = ptr::null_mut();
    assert_eq!(
        sobolcpi_dataset_new(x.as_ptr(), n, 3, y.as_ptr(), &mut ds),
        SobolcpiStatus::Ok
    );
    ds
}

#[test]
fn full_workflow_through_handles() {
    unsafe {
        let train = dataset(400, 1);
        let test = dataset(200, 2);
        assert_eq!(
            (sobolcpi_dataset_n(test), sobolcpi_dataset_p(test)),
            (200, 3)
        );
        let ols = CString::new(r#"{"kind":"ols"}"#).unwrap();

        let mut model = ptr::null_mut();
        assert_eq!(
            sobolcpi_model_fit(ols.as_ptr(), train, 0, &mut model),
            SobolcpiStatus::Ok
        );
        let row = [1.0, 0.0, 0.0];
        let mut pred = [0.0];
        assert_eq!(
            sobolcpi_model_predict(model, row.as_ptr(), 1, 3, pred.as_mut_ptr()),
            SobolcpiStatus::Ok
        );
        assert!((pred[0] - 2.0).abs() < 0.1, "prediction {}", pred[0]);

        let mut sampler = ptr::null_mut();
        assert_eq!(
            sobolcpi_sampler_fit(train, 0, ols.as_ptr(), 3, &mut sampler),
            SobolcpiStatus::Ok
        );

        let (mut s1, mut c1) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            sobolcpi_sobol_cpi(model, sampler, test, 1, SobolcpiLoss::Quadratic, 9, &mut s1),
            SobolcpiStatus::Ok
        );
        assert_eq!(
            sobolcpi_cpi(model, sampler, test, SobolcpiLoss::Quadratic, 9, &mut c1),
            SobolcpiStatus::Ok
        );
        let (e1, ec) = (sobolcpi_score_estimate(s1), sobolcpi_score_estimate(c1));
        assert!((e1 - ec / 2.0).abs() <= 1e-12);
        assert!(e1 > 0.1);

        let mut len = 0usize;
        assert_eq!(
            sobolcpi_score_diffs(s1, ptr::null_mut(), 0, &mut len),
            SobolcpiStatus::Ok
        );
        assert_eq!(len, 200);
        let mut diffs = vec![0.0; len];
        assert_eq!(
            sobolcpi_score_diffs(s1, diffs.as_mut_ptr(), len, &mut len),
            SobolcpiStatus::Ok
        );
        assert!((diffs.iter().sum::<f64>() / len as f64 - e1).abs() <= 1e-12);

        let mut result = SobolcpiTestResult::default();
        assert_eq!(
            sobolcpi_test(
                s1,
                SobolcpiCorrection::Linear,
                -1.0,
                0,
                0.05,
                600,
                0,
                &mut result
            ),
            SobolcpiStatus::Ok
        );
        assert!(result.reject && result.p_value < 0.05 && result.c > 0.0);

        let mut null_score = ptr::null_mut();
        assert_eq!(
            sobolcpi_loco(
                model,
                ols.as_ptr(),
                train,
                test,
                2,
                SobolcpiLoss::Quadratic,
                0,
                &mut null_score
            ),
            SobolcpiStatus::Ok
        );
        assert_eq!(
            sobolcpi_test(
                null_score,
                SobolcpiCorrection::Sqrt,
                1.0,
                0,
                0.05,
                600,
                0,
                &mut result
            ),
            SobolcpiStatus::Ok
        );
        assert!(!result.reject);

        let mut pf = ptr::null_mut();
        assert_eq!(
            sobolcpi_pfi(model, test, 0, SobolcpiLoss::Quadratic, 4, &mut pf),
            SobolcpiStatus::Ok
        );
        assert!(sobolcpi_score_estimate(pf) > e1);

        for s in [s1, c1, null_score, pf] {
            sobolcpi_score_free(s);
        }
        sobolcpi_sampler_free(sampler);
        sobolcpi_model_free(model);
        sobolcpi_dataset_free(train);
        sobolcpi_dataset_free(test);
    }
}

#[test]
fn split_partitions_rows() {
    unsafe {
        let ds = dataset(100, 5);
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            sobolcpi_dataset_split(ds, 0.8, 1, &mut a, &mut b),
            SobolcpiStatus::Ok
        );
        assert_eq!(sobolcpi_dataset_n(a) + sobolcpi_dataset_n(b), 100);
        assert_eq!(sobolcpi_dataset_n(a), 80);
        for d in [ds, a, b] {
            sobolcpi_dataset_free(d);
        }
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut ds = ptr::null_mut();
        let y = [1.0];
        assert_eq!(
            sobolcpi_dataset_new(ptr::null(), 1, 1, y.as_ptr(), &mut ds),
            SobolcpiStatus::NullPointer
        );
        assert!(last_error().contains("null"));

        let train = dataset(50, 3);
        let bad = CString::new(r#"{"kind":"ridge","lambda":-1}"#).unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(
            sobolcpi_model_fit(bad.as_ptr(), train, 0, &mut model),
            SobolcpiStatus::InvalidParameter
        );
        assert!(model.is_null());
        assert!(last_error().contains("lambda"));

        let ols = CString::new(r#"{"kind":"ols"}"#).unwrap();
        let mut sampler = ptr::null_mut();
        assert_eq!(
            sobolcpi_sampler_fit(train, 7, ols.as_ptr(), 0, &mut sampler),
            SobolcpiStatus::InvalidParameter
        );

        let missing = CString::new("/nonexistent/data.csv").unwrap();
        assert_eq!(
            sobolcpi_dataset_read_csv(missing.as_ptr(), &mut ds),
            SobolcpiStatus::Io
        );

        assert_eq!(sobolcpi_dataset_n(ptr::null()), 0);
        assert!(sobolcpi_score_estimate(ptr::null()).is_nan());
        sobolcpi_dataset_free(ptr::null_mut());
        sobolcpi_dataset_free(train);
    }
}

#[test]
fn csv_round_trip_through_reader() {
    let dir = std::env::temp_dir().join(format!("sobolcpi-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("d.csv");
    std::fs::write(&path, "x0,x1,y\n1,2,3\n4,5,6\n7,8,10\n").unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(
            sobolcpi_dataset_read_csv(c.as_ptr(), &mut ds),
            SobolcpiStatus::Ok
        );
        assert_eq!((sobolcpi_dataset_n(ds), sobolcpi_dataset_p(ds)), (3, 2));
        sobolcpi_dataset_free(ds);
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn header_declares_the_abi() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sobolcpi.h"))
            .unwrap();
    for name in [
        "SobolcpiStatus",
        "SobolcpiTestResult",
        "typedef struct SobolcpiDataset SobolcpiDataset",
        "sobolcpi_dataset_new",
        "sobolcpi_model_fit",
        "sobolcpi_sampler_fit",
        "sobolcpi_sobol_cpi",
        "sobolcpi_loco",
        "sobolcpi_test",
        "sobolcpi_last_error",
        "SOBOLCPI_STATUS_NULL_POINTER",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let v = unsafe { CStr::from_ptr(sobolcpi_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let dir = std::env::temp_dir().join(format!("sobolcpi-ffi-c-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("use.c");
    std::fs::write(
        &src,
        "#include \"sobolcpi.h\"\n\
         int main(void) {\n\
           SobolcpiDataset *d = NULL;\n\
           SobolcpiTestResult r;\n\
           SobolcpiStatus s = sobolcpi_dataset_new(NULL, 0, 0, NULL, &d);\n\
           (void)r;\n\
           return s == SOBOLCPI_STATUS_NULL_POINTER ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
        .expect("a C compiler named cc");
    std::fs::remove_dir_all(dir).unwrap();
    assert!(status.success());
}
